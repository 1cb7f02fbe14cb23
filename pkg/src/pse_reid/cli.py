"""Command-line surface: scenario generation, cost assembly, transition
learning, solving and evaluation, plus the full pipeline in one shot.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import appearance as app_mod
from . import evaluation as eval_mod
from . import solvers as solver_mod
from . import synth as synth_mod
from . import transitions as trans_mod
from .motioncosts import SquashParams, camera_speed_stats
from .objective import (
    Assignment,
    ComponentModels,
    CostModel,
    Weights,
    assemble_cost_model,
    linear_cost_matrix,
    quadratic_value,
)
from .trackdata import (
    DEFAULT_TAU,
    Hypothesis,
    Scenario,
    ScenarioError,
    candidate_matches,
    load_scenario,
    save_scenario,
)

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    scenario: str
    tau: float = DEFAULT_TAU
    weights: Weights = field(default_factory=Weights)
    squash: dict[str, SquashParams] | None = None
    solver: str = "sls"
    seed: int = 0
    em_rounds: int = 3
    keep_quantile: float = trans_mod.DEFAULT_KEEP_QUANTILE
    use_disc: bool = True
    disc_c: float = app_mod.DEFAULT_C
    bag_size: int = app_mod.DEFAULT_BAG_SIZE
    sls: solver_mod.SLSParams | None = None
    fw: solver_mod.FWParams | None = None
    outdir: str = "out"
    jobs: int = 1
    dump_costs: bool = False
    trace: bool = False

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f for f in RunConfig.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        if "scenario" not in d:
            raise ConfigError("run config must name a scenario file")
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = Weights.from_dict(d["weights"])
        if "squash" in d and isinstance(d["squash"], dict):
            d["squash"] = {
                term: SquashParams(alpha=float(p["alpha"]), beta=float(p["beta"]))
                for term, p in d["squash"].items()
            }
        if "sls" in d and isinstance(d["sls"], dict):
            d["sls"] = solver_mod.SLSParams(**d["sls"])
        if "fw" in d and isinstance(d["fw"], dict):
            d["fw"] = solver_mod.FWParams(**d["fw"])
        try:
            return RunConfig(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc


def _linear_builder(weights: Weights, tau: float, squash=None):
    """Cost builder closure for the refinement loop: appearance + speed
    (+ transitions once the model is non-None)."""

    def build(s: Scenario, model):
        models = ComponentModels(
            speed_a=camera_speed_stats(s.tracks_a),
            speed_b=camera_speed_stats(s.tracks_b),
            transitions=model,
            disc_models=None,
            squash_overrides=squash,
        )
        w = Weights(
            app=weights.app,
            disc=0.0,
            spd=weights.spd,
            tr=weights.tr if model is not None else 0.0,
            spt=0.0,
            grp=0.0,
            inv_coll=0.0,
            inv_spd=0.0,
        )
        cm = assemble_cost_model(s, models, w, tau)
        return list(cm.hypotheses), cm.L

    return build


def munkres_match_solver(s: Scenario, hyps, costs) -> list[Hypothesis]:
    """Full (no-skip) minimum-cost matching used inside the EM loop."""
    n_a = s.n_a
    n_b = s.n_b
    mat = np.full((n_a, n_b), np.inf)
    for h, c in zip(hyps, costs):
        mat[h.i_a, h.j_b] = c
    return [Hypothesis(*p) for p in solver_mod.munkres_assign(mat, allow_skip=False)]


def train_disc_models(
    s: Scenario,
    linear_costs,
    tau: float,
    c: float = app_mod.DEFAULT_C,
    bag_size: int = app_mod.DEFAULT_BAG_SIZE,
    jobs: int = 1,
) -> dict[int, app_mod.DiscriminativeModel]:
    """Per-person discriminative models; people with an empty candidate bag
    are skipped (they fall back to raw appearance)."""

    def train_one(i_a: int):
        try:
            ts = app_mod.mine_training_sets(s, i_a, linear_costs, tau, bag_size=bag_size)
        except app_mod.EmptyBagError:
            return i_a, None
        return i_a, app_mod.train_discriminative(ts, c)

    indices = range(s.n_a)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(train_one, indices))
    else:
        results = [train_one(i) for i in indices]
    return {i: m for i, m in results if m is not None}


@dataclass
class PipelineResult:
    solution_path: Path
    model_path: Path
    report_path: Path
    fscore: float | None
    loss: float
    solver: str


def run_pipeline(rc: RunConfig) -> PipelineResult:
    """Execute the full pipeline: load, transition refinement, per-person
    models, quadratic assembly, final solve, evaluation artifacts."""
    outdir = Path(rc.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    s = load_scenario(rc.scenario)

    # transition refinement (uniform-initialized model when rounds == 0)
    builder = _linear_builder(rc.weights, rc.tau, rc.squash)
    if rc.em_rounds > 0:
        model, _diag = trans_mod.em_refine(
            s,
            builder,
            munkres_match_solver,
            rounds=rc.em_rounds,
            tau=rc.tau,
            keep_quantile=rc.keep_quantile,
        )
    else:
        model = trans_mod.GateTransitionModel.uniform(
            s.camera_a.n_gates, s.camera_b.n_gates, tau=rc.tau
        )
    model_path = outdir / "model.json"
    model_path.write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True))

    disc_models = None
    if rc.use_disc and rc.weights.disc != 0.0:
        hyps, lin_costs = builder(s, model)
        disc_models = train_disc_models(
            s, lin_costs, rc.tau, c=rc.disc_c, bag_size=rc.bag_size, jobs=rc.jobs
        )

    weights = rc.weights
    if disc_models is None and weights.disc != 0.0:
        weights = Weights(**{**weights.to_dict(), "disc": 0.0})
    models = ComponentModels(
        speed_a=camera_speed_stats(s.tracks_a),
        speed_b=camera_speed_stats(s.tracks_b),
        transitions=model,
        disc_models=disc_models,
        squash_overrides=rc.squash,
    )
    cm = assemble_cost_model(s, models, weights, rc.tau)
    if rc.dump_costs:
        (outdir / "costs.json").write_text(json.dumps(cm.to_dict(), indent=2, sort_keys=True))

    gt = s.ground_truth_pairs() or None
    try:
        result = _dispatch_solver(cm, rc, gt)
    except Exception as exc:  # noqa: BLE001 - tagged and re-raised for exit codes
        raise SolverFailure(f"solver {rc.solver!r} failed: {exc}") from exc

    solution_path = outdir / "solution.json"
    _write_solution(solution_path, s, cm, result, rc)
    if rc.trace:
        _write_trace(outdir / "trace.csv", result)

    report = eval_mod.cmc_linear(cm.hypotheses, cm.L, gt) if gt else None
    f = None
    if gt:
        selected = [tuple(cm.hypotheses[k]) for k in result.z.selected]
        p, r, f = eval_mod.fscore(selected, gt)
        report.precision, report.recall, report.fscore = p, r, f
    report_path = outdir / "report.csv"
    if report is not None:
        eval_mod.emit_report(report, report_path)
    return PipelineResult(
        solution_path=solution_path,
        model_path=model_path,
        report_path=report_path,
        fscore=f,
        loss=result.loss,
        solver=rc.solver,
    )


def _dispatch_solver(cm: CostModel, rc: RunConfig, gt) -> solver_mod.SolverResult:
    if rc.solver == "munkres":
        return solver_mod.munkres_result(cm, allow_skip=False, gt=gt)
    if rc.solver == "sls":
        params = rc.sls or solver_mod.SLSParams(seed=rc.seed)
        if params.seed != rc.seed:
            params = solver_mod.SLSParams(
                r_max=params.r_max,
                max_sweeps=params.max_sweeps,
                seed=rc.seed,
                tol=params.tol,
                max_combinations=params.max_combinations,
            )
        return solver_mod.stochastic_local_search(cm, params, gt=gt)
    if rc.solver == "fw":
        params = rc.fw or solver_mod.FWParams(seed=rc.seed)
        return solver_mod.frank_wolfe(cm, params, gt=gt)
    raise ConfigError(f"unknown solver {rc.solver!r} (expected munkres, sls or fw)")


def _write_solution(path: Path, s: Scenario, cm: CostModel, result, rc: RunConfig) -> None:
    pairs = [cm.hypotheses[k] for k in result.z.selected]
    payload = {
        "solver": rc.solver,
        "seed": rc.seed,
        "loss": result.loss,
        "iterations": result.iterations,
        "hypotheses": [[h.i_a, h.j_b] for h in pairs],
        "pairs": [[s.tracks_a[h.i_a].id, s.tracks_b[h.j_b].id] for h in pairs],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _write_trace(path: Path, result) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "fscore"])
        for point in result.trace:
            writer.writerow(
                [point.step, f"{point.loss:.12g}", "" if point.fscore is None else f"{point.fscore:.6g}"]
            )


# ---------------------------------------------------------------------------
# click surface


@click.group()
def cli():
    """Cross-camera re-identification with PSE constraints."""


@cli.group("synth")
def synth_group():
    """Synthetic scenario generation."""


@synth_group.command("generate")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Generator config JSON; defaults apply when omitted.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def synth_generate(config_path, seed, out):
    """Generate a scenario and its planted truth (<out>.truth.json)."""
    cfg_dict = json.loads(config_path.read_text()) if config_path else {}
    if seed is not None:
        cfg_dict["seed"] = seed
    try:
        cfg = synth_mod.SynthConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    scenario, truth = synth_mod.generate_scenario(cfg)
    save_scenario(scenario, out)
    synth_mod.save_truth(truth, Path(str(out) + ".truth.json"))
    click.echo(f"wrote {out} ({scenario.n_a} tracks in a, {scenario.n_b} in b)")


@cli.command("costs")
@click.option("--scenario", type=click.Path(path_type=Path), required=True)
@click.option("--tau", type=float, default=DEFAULT_TAU, show_default=True)
@click.option("--transitions", "transitions_path", type=click.Path(path_type=Path), default=None)
@click.option("--disc/--no-disc", default=False, show_default=True)
@click.option("--disc-c", type=float, default=app_mod.DEFAULT_C, show_default=True)
@click.option("--bag-size", type=int, default=app_mod.DEFAULT_BAG_SIZE, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def costs_cmd(scenario, tau, transitions_path, disc, disc_c, bag_size, jobs, out):
    """Assemble and dump the cost model as JSON."""
    s = load_scenario(scenario)
    model = _load_transitions(transitions_path, s, tau)
    weights = Weights()
    builder = _linear_builder(weights, tau)
    disc_models = None
    if disc:
        hyps, lin = builder(s, model)
        disc_models = train_disc_models(s, lin, tau, c=disc_c, bag_size=bag_size, jobs=jobs)
    if disc_models is None:
        weights = Weights(**{**weights.to_dict(), "disc": 0.0})
    models = ComponentModels(
        speed_a=camera_speed_stats(s.tracks_a),
        speed_b=camera_speed_stats(s.tracks_b),
        transitions=model,
        disc_models=disc_models,
    )
    cm = assemble_cost_model(s, models, weights, tau)
    Path(out).write_text(json.dumps(cm.to_dict(), indent=2, sort_keys=True))
    click.echo(f"wrote {out} ({cm.n_hypotheses} hypotheses, {cm.Q.nnz} quadratic entries)")


def _load_transitions(path, s: Scenario, tau: float):
    if path is None:
        return trans_mod.GateTransitionModel.uniform(s.camera_a.n_gates, s.camera_b.n_gates, tau=tau)
    return trans_mod.GateTransitionModel.from_dict(json.loads(Path(path).read_text()))


@cli.command("em-learn")
@click.option("--scenario", type=click.Path(path_type=Path), required=True)
@click.option("--tau", type=float, default=DEFAULT_TAU, show_default=True)
@click.option("--rounds", type=int, default=3, show_default=True)
@click.option("--momentum", type=float, default=trans_mod.DEFAULT_MOMENTUM, show_default=True)
@click.option("--keep-quantile", type=float, default=trans_mod.DEFAULT_KEEP_QUANTILE, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def em_learn(scenario, tau, rounds, momentum, keep_quantile, out):
    """Learn gate transition distributions by EM-style refinement."""
    s = load_scenario(scenario)
    model, diag = trans_mod.em_refine(
        s,
        _linear_builder(Weights(), tau),
        munkres_match_solver,
        rounds=rounds,
        momentum=momentum,
        tau=tau,
        keep_quantile=keep_quantile,
    )
    Path(out).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True))
    for d in diag:
        auc = f" auc={d.cmc_auc:.4f}" if d.cmc_auc is not None else ""
        click.echo(f"round {d.iteration}: matched={d.n_matched} kept={d.n_kept}{auc}")
    click.echo(f"wrote {out}")


@cli.command("solve")
@click.option("--scenario", type=click.Path(path_type=Path), required=True)
@click.option("--solver", type=click.Choice(["munkres", "sls", "fw"]), default="sls", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tau", type=float, default=DEFAULT_TAU, show_default=True)
@click.option("--transitions", "transitions_path", type=click.Path(path_type=Path), default=None)
@click.option("--disc/--no-disc", default=False, show_default=True)
@click.option("--trace", "trace_path", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def solve_cmd(scenario, solver, seed, tau, transitions_path, disc, trace_path, out):
    """Solve the assembled objective with the chosen optimizer."""
    s = load_scenario(scenario)
    model = _load_transitions(transitions_path, s, tau)
    weights = Weights() if disc else Weights(**{**Weights().to_dict(), "disc": 0.0})
    disc_models = None
    if disc:
        builder = _linear_builder(weights, tau)
        hyps, lin = builder(s, model)
        disc_models = train_disc_models(s, lin, tau)
    models = ComponentModels(
        speed_a=camera_speed_stats(s.tracks_a),
        speed_b=camera_speed_stats(s.tracks_b),
        transitions=model,
        disc_models=disc_models,
    )
    cm = assemble_cost_model(s, models, weights, tau)
    rc = RunConfig(scenario=str(scenario), solver=solver, seed=seed, tau=tau)
    gt = s.ground_truth_pairs() or None
    try:
        result = _dispatch_solver(cm, rc, gt)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise SolverFailure(f"solver {solver!r} failed: {exc}") from exc
    _write_solution(Path(out), s, cm, result, rc)
    if trace_path:
        _write_trace(Path(trace_path), result)
    click.echo(f"{solver}: loss={result.loss:.6g} matches={len(result.z.selected)} -> {out}")


@cli.command("eval")
@click.option("--scenario", type=click.Path(path_type=Path), required=True)
@click.option("--solution", type=click.Path(path_type=Path), required=True)
@click.option("--gt/--no-gt", "use_gt", default=True, show_default=True,
              help="Score against the scenario's ground truth.")
@click.option("--tau", type=float, default=DEFAULT_TAU, show_default=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path), required=True)
def eval_cmd(scenario, solution, use_gt, tau, report_path):
    """Evaluate a solution file: CMC on linear costs plus 1-1 F-score."""
    s = load_scenario(scenario)
    gt = s.ground_truth_pairs() if use_gt else []
    if not gt:
        raise ConfigError("no ground truth available; cannot evaluate")
    payload = json.loads(Path(solution).read_text())
    selected = [tuple(h) for h in payload["hypotheses"]]
    model = trans_mod.GateTransitionModel.uniform(s.camera_a.n_gates, s.camera_b.n_gates, tau=tau)
    hyps, lin = _linear_builder(Weights(), tau)(s, model)
    report = eval_mod.cmc_linear(hyps, lin, gt)
    p, r, f = eval_mod.fscore(selected, gt)
    report.precision, report.recall, report.fscore = p, r, f
    eval_mod.emit_report(report, Path(report_path))
    click.echo(f"precision={p:.4f} recall={r:.4f} fscore={f:.4f} -> {report_path}")


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
@click.option("--scenario", type=click.Path(path_type=Path), default=None)
@click.option("--solver", type=click.Choice(["munkres", "sls", "fw"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--em-rounds", type=int, default=None)
@click.option("--outdir", type=click.Path(path_type=Path), default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--disc/--no-disc", "use_disc", default=None)
@click.option("--dump-costs", is_flag=True, default=False)
@click.option("--trace", is_flag=True, default=False)
def run_cmd(config_path, scenario, solver, seed, tau, em_rounds, outdir, jobs, use_disc,
            dump_costs, trace):
    """Run the full pipeline from a config file; explicit flags win."""
    try:
        raw = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    rc = RunConfig.from_dict(raw)
    overrides = {
        "scenario": str(scenario) if scenario else None,
        "solver": solver,
        "seed": seed,
        "tau": tau,
        "em_rounds": em_rounds,
        "outdir": str(outdir) if outdir else None,
        "jobs": jobs,
        "use_disc": use_disc,
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(rc, key, val)
    rc.dump_costs = rc.dump_costs or dump_costs
    rc.trace = rc.trace or trace
    result = run_pipeline(rc)
    msg = f"{result.solver}: loss={result.loss:.6g}"
    if result.fscore is not None:
        msg += f" fscore={result.fscore:.4f}"
    click.echo(msg)
    click.echo(f"artifacts: {result.solution_path}, {result.model_path}, {result.report_path}")


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except ScenarioError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except SolverFailure as exc:
        click.echo(f"solver error: {exc}", err=True)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
