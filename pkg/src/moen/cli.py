"""Command line harness: ``moen <command> --config FILE [overrides]``.

Commands write CSV files (and PNG figures unless ``[output] plots = false``)
into the output directory together with ``resolved_config.ini``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure, 4 file system error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from moen import plotting
from moen.config import RunConfig, load_config
from moen.csvio import read_csv, trajectory_rows, write_csv
from moen.errors import ConfigError, MoenError, NonFiniteError, NotLinearError, SingularError
from moen.filters import extended_kalman, kalman_bucy, optimal_closed_loop
from moen.netgain import NetGain, load_theta, save_theta
from moen.numerics import GridTrajectory
from moen.observer import network_observer, rms
from moen.systems import ObservationRecord, simulate_truth
from moen.training import TrainingConfig, backward_state, train

log = logging.getLogger("moen")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


# -- helpers ----------------------------------------------------------------

def _names(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


def _matrix_names(prefix, rows, cols):
    return [f"{prefix}{i + 1}_{j + 1}" for i in range(rows) for j in range(cols)]


def _prepare(cfg: RunConfig) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    return out


def read_observations(path, scenario) -> ObservationRecord:
    """Observation record from a ``truth.csv``-style file on the scenario grid.

    State columns ``x1..xn`` are optional; ``y1..yr`` are required.
    """
    header, data = read_csv(path)
    model, grid = scenario.model, scenario.grid
    xcols, ycols = _names("x", model.n), _names("y", model.r)
    missing = [c for c in ["t"] + ycols if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")
    t = data[:, header.index("t")]
    if t.shape != grid.nodes.shape or not np.array_equal(t, grid.nodes):
        raise ConfigError(
            f"{path}: time column does not match the configured grid"
            f" (T={scenario.T}, grid_steps={scenario.grid_steps})"
        )
    y = data[:, [header.index(c) for c in ycols]]
    x = None
    if all(c in header for c in xcols):
        x = GridTrajectory(grid, data[:, [header.index(c) for c in xcols]])
    return ObservationRecord(grid, GridTrajectory(grid, y), x)


def _observations(cfg: RunConfig, scenario, obs_path) -> ObservationRecord:
    if obs_path is None:
        return simulate_truth(scenario)
    return read_observations(obs_path, scenario)


def training_config(cfg: RunConfig, scenario, obs, d=None) -> TrainingConfig:
    if obs.x_truth is None and cfg["training", "ensemble_center"] is None:
        raise ConfigError("observation file has no state columns; set [training] ensemble_center")
    end = obs.x_truth.values[-1] if obs.x_truth is not None else cfg["training", "ensemble_center"]
    return TrainingConfig(
        scenario=scenario,
        obs=obs,
        shape=cfg.network_shape(),
        ensemble=cfg.ensemble(end, d),
        iters=cfg["training", "iters"],
        shift_at=cfg["training", "shift_at"],
        gamma_max=cfg["training", "gamma_max"],
        bb_rule=cfg["training", "bb_rule"],
        init_seed=cfg["training", "init_seed"],
        init_scale=cfg["training", "init_scale"],
        first_step=cfg["training", "first_step"],
        alpha_in_gain=cfg["observer", "alpha_in_gain"],
        ridge=cfg["observer", "ridge"],
        gradient=cfg["training", "gradient"],
    )


def _write_costs(path, state):
    rows = [(r.iteration, r.J_theta, r.J_opt, r.gamma, r.shift_active) for r in state.cost_history]
    write_csv(path, ["iter", "J_theta", "J_opt", "gamma", "shift_active"], rows)


def disturbance_l2(theta, state, scenario, kr) -> list:
    """||v_theta - v_opt||_{L2} per terminal sample (linear models)."""
    gain = NetGain(theta, state.shift)
    G = scenario.model.G
    X = backward_state(gain, state.terminals, scenario).values
    t = scenario.grid.nodes
    v_theta = np.stack([gain.value(tk, X[k]) for k, tk in enumerate(t)]) @ G
    _, v_opt = optimal_closed_loop(kr, state.terminals, scenario)
    diff2 = np.sum((v_theta - v_opt.values) ** 2, axis=-1)  # (M+1, d)
    return [float(np.sqrt(trapezoid(diff2[:, j], t))) for j in range(diff2.shape[1])]


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    sc = cfg.scenario()
    obs = simulate_truth(sc)
    m = sc.model
    write_csv(out / "truth.csv", ["t"] + _names("x", m.n) + _names("y", m.r),
              trajectory_rows(obs.grid.nodes, obs.x_truth.values, obs.y.values))
    if cfg["output", "plots"]:
        plotting.plot_states(out / "truth.png", obs.grid.nodes,
                             {"x": obs.x_truth.values, "y": obs.y.values}, title=m.name)
    print(f"wrote {out / 'truth.csv'} ({len(obs.grid)} rows)")
    return EXIT_OK


def _cmd_filter(cfg: RunConfig, args, extended: bool) -> int:
    sc = cfg.scenario()
    m = sc.model
    if not extended and not m.is_linear:
        raise NotLinearError(f"kalman needs a linear model, config has {m.name!r}; use ekf")
    out = _prepare(cfg)
    obs = _observations(cfg, sc, args.obs)
    kr = (extended_kalman if extended else kalman_bucy)(m, obs, sc)
    t = obs.grid.nodes
    write_csv(out / "estimate.csv",
              ["t"] + _names("xhat", m.n) + _matrix_names("gain", m.n, m.r),
              trajectory_rows(t, kr.xhat.values, kr.gain.values))
    write_csv(out / "sigma.csv", ["t"] + _matrix_names("sigma", m.n, m.n),
              trajectory_rows(t, kr.Sigma.values))
    series = {"estimate": kr.xhat.values}
    if obs.x_truth is not None:
        series = {"truth": obs.x_truth.values, **series}
        print(f"rms(xhat1 - x1) = {rms(kr.xhat.values[:, 0], obs.x_truth.values[:, 0]):.6g}")
    if cfg["output", "plots"]:
        plotting.plot_states(out / "estimate.png", t, series,
                             title="extended Kalman" if extended else "Kalman-Bucy")
    print(f"wrote {out / 'estimate.csv'} and {out / 'sigma.csv'}")
    return EXIT_OK


def cmd_kalman(cfg, args) -> int:
    return _cmd_filter(cfg, args, extended=False)


def cmd_ekf(cfg, args) -> int:
    return _cmd_filter(cfg, args, extended=True)


def cmd_train(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    sc = cfg.scenario()
    obs = _observations(cfg, sc, args.obs)
    tc = training_config(cfg, sc, obs)
    theta, state = train(tc)
    theta_path = Path(args.theta) if args.theta else out / "theta.txt"
    save_theta(theta_path, theta)
    _write_costs(out / "costs.csv", state)
    write_csv(out / "terminals.csv", ["sample"] + _names("xi", sc.model.n),
              [[j] + list(xi) for j, xi in enumerate(state.terminals)])
    J_theta = state.cost_history[state.best_iteration].J_theta
    if sc.model.is_linear:
        kr = kalman_bucy(sc.model, obs, sc)
        l2 = disturbance_l2(theta, state, sc, kr)
        write_csv(out / "disturbance_l2.csv", ["sample", "l2_error"], list(enumerate(l2)))
    if cfg["output", "plots"]:
        it = [r.iteration for r in state.cost_history]
        J = [r.J_theta for r in state.cost_history]
        plotting.plot_costs(out / "costs.png", {"J_theta": (it, J)},
                            {"J_theta": state.J_opt}, shift_at=tc.shift_at)
    msg = f"J_theta = {J_theta:.10g} (iteration {state.best_iteration})"
    if state.J_opt is not None:
        msg += f", J_opt = {state.J_opt:.10g}"
    print(msg)
    print(f"wrote {theta_path} and {out / 'costs.csv'}")
    return EXIT_OK


def cmd_observe(cfg: RunConfig, args) -> int:
    sc = cfg.scenario()
    m = sc.model
    theta_path = Path(args.theta) if args.theta else cfg.out_dir / "theta.txt"
    theta = load_theta(theta_path, expected=cfg.network_shape())
    out = _prepare(cfg)
    obs = _observations(cfg, sc, args.obs)
    # the shift depends on time only, so it does not enter the gain
    res = network_observer(NetGain(theta), obs, sc, cfg["observer", "alpha_in_gain"],
                           cfg["observer", "ridge"], cfg["observer", "symmetrize"])
    t = obs.grid.nodes
    write_csv(out / "observer.csv",
              ["t"] + _names("xhat", m.n) + _matrix_names("gain", m.n, m.r) + ["conditioning"],
              trajectory_rows(t, res.xhat.values, res.gain.values, res.conditioning.values))
    ekf = extended_kalman(m, obs, sc)
    metrics = [
        ("max_norm_xhat", float(np.max(np.linalg.norm(res.xhat.values, axis=1)))),
        ("min_conditioning", float(res.conditioning.values.min())),
        ("rms_signal_y1", rms(obs.y.values[:, 0])),
    ]
    series = {"network": res.xhat.values, "EKF": ekf.xhat.values}
    if obs.x_truth is not None:
        x1 = obs.x_truth.values[:, 0]
        metrics += [
            ("rms_network_x1", rms(res.xhat.values[:, 0], x1)),
            ("rms_ekf_x1", rms(ekf.xhat.values[:, 0], x1)),
            ("rms_trivial_x1", rms(np.full_like(x1, sc.x0_prior[0]), x1)),
        ]
        series = {"truth": obs.x_truth.values, **series}
    write_csv(out / "observer_metrics.csv", ["metric", "value"], metrics)
    if cfg["output", "plots"]:
        plotting.plot_states(out / "observer.png", t, series, title=f"{m.name} observer")
    for name, value in metrics:
        print(f"{name} = {value:.6g}")
    return EXIT_OK


def report_rows(cfg: RunConfig, out: Path | None = None, plots: bool = False):
    """Train every (d, alpha) cell and return ``(d, alpha, J_opt, J_theta)`` rows."""
    model = cfg.model()
    if not model.is_linear:
        raise NotLinearError("report compares against the Kalman-Bucy optimum; needs a linear model")
    rows, curves, optima = [], {}, {}
    for d in cfg["report", "d_list"]:
        for alpha in cfg["report", "alpha_list"]:
            sc = cfg.scenario(alpha=alpha)
            obs = simulate_truth(sc)
            tc = training_config(cfg, sc, obs, d=d)
            log.info("report cell d=%d alpha=%g", d, alpha)
            _, state = train(tc)
            J_theta = state.cost_history[state.best_iteration].J_theta
            rows.append((d, alpha, state.J_opt, J_theta))
            label = f"d={d} alpha={alpha:g}"
            if out is not None:
                _write_costs(out / f"costs_d{d}_alpha{alpha:g}.csv", state)
            curves[label] = ([r.iteration for r in state.cost_history],
                             [r.J_theta for r in state.cost_history])
            optima[label] = state.J_opt
    if plots and out is not None and curves:
        plotting.plot_costs(out / "report.png", curves, optima, shift_at=cfg["training", "shift_at"])
    return rows


def format_report(rows) -> str:
    head = f"{'d':>4}  {'alpha':>8}  {'J_opt':>12}  {'J_theta':>12}  {'gap':>9}"
    lines = [head]
    for d, a, J_opt, J_theta in rows:
        gap = (J_theta - J_opt) / J_opt
        lines.append(f"{d:>4}  {a:>8g}  {J_opt:>12.6f}  {J_theta:>12.6f}  {100 * gap:>8.3f}%")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, args) -> int:
    if not cfg.model().is_linear:
        raise NotLinearError("report needs a linear model")
    out = _prepare(cfg)
    rows = report_rows(cfg, out, plots=cfg["output", "plots"])
    write_csv(out / "report.csv", ["d", "alpha", "J_opt", "J_theta", "gap"],
              [(d, a, Jo, Jt, (Jt - Jo) / Jo) for d, a, Jo, Jt in rows])
    text = format_report(rows)
    (out / "report.txt").write_text(text, encoding="utf-8", newline="\n")
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "kalman": cmd_kalman,
    "ekf": cmd_ekf,
    "train": cmd_train,
    "observe": cmd_observe,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moen", description="Minimum-energy observer toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--alpha", type=float, help="output weight alpha")
        p.add_argument("--samples", type=int, help="ensemble size d")
        p.add_argument("--iters", type=int, help="training iterations")
        p.add_argument("--seed", type=int, help="ensemble seed")
        p.add_argument("--out-dir", help="output directory")
        if name in ("kalman", "ekf", "train", "observe"):
            p.add_argument("--obs", help="observation CSV (default: simulate from config)")
        if name in ("train", "observe"):
            p.add_argument("--theta", help="parameter file (default: OUT_DIR/theta.txt)")
    return parser


def _overrides(args) -> dict:
    ov = {"alpha": args.alpha, "samples": args.samples, "iters": args.iters,
          "seed": args.seed, "out_dir": args.out_dir}
    if args.command == "report":
        ov.pop("alpha"), ov.pop("samples")
    return ov


def _report_lists(cfg: RunConfig, args) -> RunConfig:
    values = dict(cfg.values)
    if args.alpha is not None:
        values["report", "alpha_list"] = (args.alpha,)
    if args.samples is not None:
        values["report", "d_list"] = (args.samples,)
    return RunConfig(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "report":
            cfg = _report_lists(cfg, args)
        return COMMANDS[args.command](cfg, args)
    except (NonFiniteError, SingularError) as exc:
        print(f"moen: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MoenError, ValueError) as exc:
        print(f"moen: invalid configuration or input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"moen: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
