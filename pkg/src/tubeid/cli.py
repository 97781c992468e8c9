"""Command-line entry point: ``tubeid <command> [--config PATH] [--out DIR] ...``.

Every command writes into its output directory the effective configuration
(``config.json``), its results, and ``manifest.json`` listing each output with
its SHA-256.  No timing or host information goes into those files, so a rerun
from the stored configuration reproduces them byte for byte.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 numerical
instability, 4 no convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import struct
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .autodiff import NonFiniteError
from .config import ConfigError, PRESETS, RunConfig, load_config
from .fdm import FdmSolution, NumericalInstability, SteadyStateNotReached
from .trainer import TrainingDiverged

log = logging.getLogger("tubeid")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INSTABILITY, EXIT_NO_CONVERGENCE = 0, 1, 2, 3, 4

FIELD_HEADER = struct.Struct("<QQdd")  # nx, nt, dx, dt


# -- output helpers -----------------------------------------------------------

class RunDir:
    """Output directory that records every file it writes."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _target(self, name: str) -> Path:
        self.files.append(name)
        return self.path / name

    def write_json(self, name: str, obj) -> None:
        self._target(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_text(self, name: str, text: str) -> None:
        self._target(name).write_text(text)

    def write_csv(self, name: str, columns: dict) -> None:
        """Columns of equal length; floats printed with round-trip precision."""
        names = list(columns)
        data = [np.asarray(columns[k]) for k in names]
        lines = [",".join(names)]
        for row in zip(*data):
            lines.append(",".join(_fmt(v) for v in row))
        self._target(name).write_text("\n".join(lines) + "\n")

    def write_rows(self, name: str, rows: list[dict]) -> None:
        if not rows:
            self.write_text(name, "")
            return
        self.write_csv(name, {k: [r[k] for r in rows] for k in rows[0]})

    def write_bytes(self, name: str, blob: bytes) -> None:
        self._target(name).write_bytes(blob)

    def checkpoint(self, name: str, model, extra=None) -> None:
        model.save(self._target(name), extra=extra)

    def finish(self, command: str, cfg: RunConfig, status: dict) -> None:
        self.write_text("config.json", cfg.to_json())
        entries = {}
        for name in sorted(set(self.files)):
            entries[name] = hashlib.sha256((self.path / name).read_bytes()).hexdigest()
        manifest = {"command": command, "seed": cfg.seed, "version": __version__, "files": entries, **status}
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def field_dump(sol: FdmSolution) -> bytes:
    """Little-endian header (nx, nt, dx, dt) then p and U as row-major float64 (nt, nx)."""
    nt, nx = sol.p.shape
    return (
        FIELD_HEADER.pack(nx, nt, sol.dx, sol.dt)
        + np.ascontiguousarray(sol.p, dtype="<f8").tobytes()
        + np.ascontiguousarray(sol.U, dtype="<f8").tobytes()
    )


def read_field_dump(path) -> dict:
    raw = Path(path).read_bytes()
    nx, nt, dx, dt = FIELD_HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=FIELD_HEADER.size)
    if body.size != 2 * nx * nt:
        raise ValueError(f"{path}: payload does not match header")
    return {"nx": nx, "nt": nt, "dx": dx, "dt": dt,
            "p": body[: nx * nt].reshape(nt, nx), "U": body[nx * nt:].reshape(nt, nx)}


def load_reference(run_dir) -> FdmSolution:
    """Rebuild an FdmSolution from an fdm-forward output directory."""
    run_dir = Path(run_dir)
    dump = run_dir / "field.bin"
    summary = run_dir / "summary.json"
    if not dump.is_file() or not summary.is_file():
        raise ConfigError(f"{run_dir} is not an fdm-forward output directory")
    f = read_field_dump(dump)
    meta = json.loads(summary.read_text())
    nt, nx = f["nt"], f["nx"]
    return FdmSolution(
        x=np.arange(nx) * f["dx"], t=np.arange(nt) * f["dt"], dx=f["dx"], dt=f["dt"],
        p=f["p"], U=f["U"], Ur=np.zeros(nt), residual=meta["residual"], periods=meta["periods"],
        converged=meta["converged"], cfl=meta["cfl"], f0=meta["f0"],
    )


# -- commands -------------------------------------------------------------

def _progress(every: int):
    start = time.perf_counter()

    def on_epoch(epoch, breakdown, model):
        if epoch == 1 or epoch % every == 0:
            terms = " ".join(f"{k}={v:.3e}" for k, v in breakdown.terms.items())
            log.info("epoch %d  total=%.4e  %s  G_c=%.4e R_c=%.4e  (%.0fs)", epoch, breakdown.total, terms,
                     model.G_c, model.R_c, time.perf_counter() - start)

    return on_epoch


def _checkpointer(out: RunDir):
    return lambda epoch, model: out.checkpoint(f"checkpoint_{epoch:07d}.ckpt", model, {"epoch": epoch})


def cmd_gen_excitation(cfg: RunConfig, out: RunDir) -> dict:
    w = pipeline.excitation(cfg)
    out.write_csv("excitation.csv", {"t_s": w.times, "v_m_per_s": w.samples})
    info = {"f0": w.f0, "period": w.period, "harmonics": w.active_harmonics().tolist(),
            "cutoff": cfg.excitation.cutoff, "n_samples": len(w)}
    out.write_json("summary.json", info)
    return info


def _write_fdm(out: RunDir, sol: FdmSolution, f0: float, probes) -> dict:
    """waveforms.csv holds one row per (probe, time), probes at their nearest grid node."""
    nodes = [int(np.argmin(np.abs(sol.x - x))) for x in probes]
    nt = sol.t.size
    out.write_csv("waveforms.csv", {
        "x_m": np.repeat(sol.x[nodes], nt),
        "t_s": np.tile(sol.t, len(nodes)),
        "p_Pa": np.concatenate([sol.p[:, j] for j in nodes]),
        "U_m3_per_s": np.concatenate([sol.U[:, j] for j in nodes]),
    })
    out.write_csv("radiation.csv", {"t_s": sol.t, "U_r_m3_per_s": sol.Ur})
    out.write_bytes("field.bin", field_dump(sol))
    summary = {**sol.summary(), "f0": f0, "p_outlet_max": float(np.max(np.abs(sol.p[:, -1]))),
               "probes_m": [float(sol.x[j]) for j in nodes], "residual_history": sol.residual_history}
    out.write_json("summary.json", summary)
    return summary


def cmd_fdm_forward(cfg: RunConfig, out: RunDir) -> dict:
    try:
        sol = pipeline.fdm_reference(cfg)
    except SteadyStateNotReached as exc:
        _write_fdm(out, exc.solution, cfg.excitation.f0, cfg.probe_positions())
        raise
    return _write_fdm(out, sol, cfg.excitation.f0, cfg.probe_positions())


def cmd_pinn_forward(cfg: RunConfig, out: RunDir) -> dict:
    ref = load_reference(cfg.paths.reference_fdm) if cfg.paths.reference_fdm else None
    run = pipeline.run_pinn_forward(cfg, ref, _progress(cfg.training.log_every), _checkpointer(out))
    out.write_rows("training_log.csv", run.log_rows)
    out.checkpoint("model.ckpt", run.problem.model, {"epoch": cfg.training.epochs})
    columns = {"t_s": run.t, "p_hat_Pa": run.p_hat}
    if ref is not None:
        columns["p_fdm_Pa"] = ref.p[:, -1]
    out.write_csv("pinn_outlet.csv", columns)
    summary = {"final_loss": run.log_rows[-1], "scaling": asdict(run.problem.scaling),
               "outlet_p_scale": run.problem.outlet_p_scale}
    if run.relative_l2 is not None:
        summary["comparison"] = {"reference": cfg.paths.reference_fdm, "relative_l2": run.relative_l2}
    out.write_json("summary.json", summary)
    return summary


def cmd_identify(cfg: RunConfig, out: RunDir) -> dict:
    run = pipeline.run_identify(cfg, _progress(cfg.training.log_every), _checkpointer(out))
    out.write_csv("target.csv", {"t_s": run.target_t, "p_clean_Pa": run.target_clean, "p_measured_Pa": run.target_noisy})
    out.write_rows("training_log.csv", run.log_rows)
    r = run.result
    out.write_csv("error_history.csv", {
        "epoch": np.arange(1, r.G_history.size + 1),
        "G_c": r.G_history, "R_c": r.R_history,
        "G_c_err_pct": 100 * (r.G_history - cfg.loss.G_c) / cfg.loss.G_c,
        "R_c_err_pct": 100 * (r.R_history - cfg.loss.R_c) / cfg.loss.R_c,
    })
    out.checkpoint("model.ckpt", run.problem.model, {"epoch": cfg.training.epochs})
    result = {**r.to_json(), "true_G_c": cfg.loss.G_c, "true_R_c": cfg.loss.R_c,
              "noise_level": cfg.training.noise_level}
    out.write_json("result.json", result)
    log.info("identified G_c=%.4e (%+.2f%%)  R_c=%.4e (%+.2f%%)  in %.0fs", r.G_c, 100 * r.G_c_error,
             r.R_c, 100 * r.R_c_error, r.runtime)
    return result


def cmd_sensitivity(cfg: RunConfig, out: RunDir) -> dict:
    res = pipeline.run_sensitivity(cfg)
    w = res["waveforms"]
    out.write_csv("waveforms.csv", {"t_s": res["t"], "p_baseline_Pa": w["baseline"], "p_G_scaled_Pa": w["G"],
                                     "p_R_scaled_Pa": w["R"]})
    info = {k: res[k] for k in ("deviation_G", "deviation_R", "ratio", "factor")}
    out.write_json("sensitivity.json", info)
    return info


def cmd_gradcheck(cfg: RunConfig, out: RunDir) -> dict:
    report = pipeline.run_gradcheck(cfg)
    out.write_json("gradcheck.json", report)
    summary = {k: report[k] for k in ("tolerance", "max_relative_error", "reverse_over_forward_error", "passed")}
    summary["terms"] = {k: v["max_relative_error"] for k, v in report["terms"].items()}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return report


COMMANDS = {
    "gen-excitation": (cmd_gen_excitation, "one period of the band-limited inlet velocity"),
    "fdm-forward": (cmd_fdm_forward, "reference finite-difference steady state"),
    "pinn-forward": (cmd_pinn_forward, "train the network with known loss constants"),
    "identify": (cmd_identify, "identify G_c and R_c from outlet pressure"),
    "sensitivity": (cmd_sensitivity, "outlet response to doubling G_c or R_c"),
    "gradcheck": (cmd_gradcheck, "autodiff gradients against finite differences"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tubeid", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML or JSON configuration file")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named configuration applied before --config")
        p.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")
        p.add_argument("--error-json", action="store_true", help="print failures as JSON on stdout")
    return parser


def _fail(args, code: int, exc: BaseException, out: RunDir | None) -> int:
    info = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if out is not None:
        (out.path / "error.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    if args.error_json:
        print(json.dumps(info, sort_keys=True))
    log.error("%s: %s", info["error"], info["message"])
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    out = None
    try:
        cfg = load_config(args.config, args.preset, args.seed)
        out = RunDir(Path(args.out or Path("runs") / args.command))
        result = COMMANDS[args.command][0](cfg, out)
        failed = isinstance(result, dict) and result.get("passed") is False
        out.finish(args.command, cfg, {"status": "failed-check" if failed else "ok"})
        return EXIT_CHECK_FAILED if failed else EXIT_OK
    except ConfigError as exc:
        return _fail(args, EXIT_CONFIG, exc, out)
    except (NumericalInstability, NonFiniteError, TrainingDiverged) as exc:
        return _fail(args, EXIT_INSTABILITY, exc, out)
    except SteadyStateNotReached as exc:
        if out is not None:
            out.finish(args.command, cfg, {"status": "not-converged"})
        return _fail(args, EXIT_NO_CONVERGENCE, exc, out)


if __name__ == "__main__":
    sys.exit(main())
