"""Command-line entry point: ``sspembed <subcommand> [options]``.

Exit codes: 0 when every check passes, 2 when a check fails (the report is
still written), 1 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from . import acceptance as acc
from . import embedding_jets as ej
from .core import BallDomain, LinearSystemField, PolynomialJet, ball_samples, check_p_convex, check_ssp, ode_system
from .extension import build_extended_system, find_p_convex_radius, taylor_split
from .linear_solver import Grid, solve_linear, verify_hk_estimates, verify_l2_estimate
from .nash_moser import MODEL_PROBLEMS, IterationConfig, IterationFailure, NormLadder, Smoother, iterate, tame_check
from .serialization import decode_array, decode_float, dumps, encode
from .singular_ode import RHS_LIBRARY, uniqueness_demo
from .transform import (ChangeOfVarsError, EstimateExponents, apply_transform, assemble_linearization,
                        fd_quadratic_forms, q_formulas, run_pipeline_2d, run_pipeline_3d, solve_change_of_vars,
                        solve_change_of_vars_staged, ssp_radius)

EXIT_OK, EXIT_INPUT, EXIT_FAILED = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    input: Optional[str] = None
    output: Optional[str] = None
    tol: float = 1e-9
    seed: int = 42
    samples: int = 200
    options: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("tolerance must be positive")
        if self.samples < 1:
            raise InputError("sample count must be positive")


def load_schema(name: str) -> dict:
    return json.loads(resources.files("sspembed").joinpath("schemas", "v1", name).read_text())


def _read_json(path: Optional[str]) -> dict:
    if path is None:
        raise InputError("--input is required")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands; each returns (passed, result)

Outcome = Tuple[bool, dict]


def _jet_from_json(data: dict) -> LinearSystemField:
    try:
        jsonschema.validate(data, load_schema("jet.json"))
        n, s, jet = int(data["n"]), int(data["s"]), data["jet"]
        arrays = {
            "A0": decode_array(jet["A0"]).reshape(n, s, s),
            "A1": decode_array(jet["A_lin"]).reshape(n, n, s, s),
            "B0": decode_array(jet["B0"]).reshape(s, s),
            "B1": decode_array(jet.get("B_lin", np.zeros((n, s, s)))).reshape(n, s, s),
            "h0": decode_array(jet.get("h0", np.zeros(s))).reshape(s),
            "h1": decode_array(jet.get("h_lin", np.zeros((n, s)))).reshape(n, s),
        }
    except (jsonschema.ValidationError, ValueError) as exc:
        raise InputError(f"bad system spec: {exc}") from exc
    return LinearSystemField.from_jet(PolynomialJet(**arrays))


EXAMPLE_SYSTEMS: Dict[str, Callable[[], Tuple[LinearSystemField, List[float]]]] = {
    "ode": lambda: (ode_system(0.0, 2.0), [0.0]),
    "manufactured": lambda: (acc.manufactured_q1_system(), [0.0, 0.0]),
    "energy": lambda: (acc.manufactured_energy_system(), [0.0, 0.0]),
}


def _system(cfg: RunConfig) -> Tuple[LinearSystemField, List[float]]:
    if cfg.input is not None:
        system = _jet_from_json(_read_json(cfg.input))
        return system, [0.0] * system.n
    return EXAMPLE_SYSTEMS[cfg.options["example"]]()


def cmd_check_ssp(cfg: RunConfig) -> Outcome:
    system, center = _system(cfg)
    pts = ball_samples(system.n, cfg.options["radius"], cfg.samples, center)
    rep = check_ssp(system, pts)
    out = {"positivity": rep.to_dict()}
    passed = rep.is_ssp(cfg.tol)
    if cfg.options["pconvex_radius"] is not None:
        pc = check_p_convex(system, BallDomain(np.asarray(center, float), cfg.options["pconvex_radius"]))
        out["pconvex"] = pc._asdict()
        passed = passed and pc.pconvex
    return passed, out


def cmd_ode_demo(cfg: RunConfig) -> Outcome:
    o = cfg.options
    lo, hi = o["interval"]
    rep = uniqueness_demo(o["x0"], o["b"], RHS_LIBRARY[o["rhs"]], (lo, hi), o["grid"])
    expected_dim = 0 if lo < o["x0"] < hi else 1
    return rep.solution_space_dim == expected_dim, {"expected_kernel_dim": expected_dim, **rep.to_dict()}


def cmd_extend(cfg: RunConfig) -> Outcome:
    system, center = _system(cfg)
    ext = build_extended_system(taylor_split(system, center), sample_count=cfg.options["extension_samples"])
    radius = find_p_convex_radius(ext, cfg.options["candidates"])
    return ext.certified, {"extension": ext.to_dict(), "radius": radius.to_dict()}


def cmd_solve_linear(cfg: RunConfig) -> Outcome:
    system = acc.manufactured_energy_system()
    rows, passed, nodal = [], True, []
    for dx in cfg.options["dx"]:
        grid = Grid.ball(2, cfg.options["radius"], dx)
        sol = solve_linear(system, grid, method=cfg.options["method"])
        exact = grid.nodes[:, 0] * grid.nodes[:, 1]
        l2 = verify_l2_estimate(system, grid, sol, lambda0=4.0)
        hk = verify_hk_estimates(system, grid, sol)
        ok = l2.holds and l2.relative_imbalance <= 10 * dx and all(r.holds for r in hk)
        passed &= ok
        rows.append({"grid": grid.to_dict(), "solution": sol.to_dict(), "l2": l2.to_dict(),
                     "hk": [r.to_dict() for r in hk], "max_error": float(np.max(np.abs(sol.values[:, 0] - exact))),
                     "passed": ok})
        nodal.append((dx, grid.nodes, sol.values[:, 0]))
    if cfg.options["csv"]:
        _write_nodal_csv(cfg.options["csv"], nodal)
    return passed, {"grids": rows}


def _write_nodal_csv(path: str, nodal) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dx", "x1", "x2", "v"])
        for dx, nodes, values in nodal:
            for (x1, x2), v in zip(nodes, values):
                writer.writerow([repr(float(dx)), repr(float(x1)), repr(float(x2)), repr(float(v))])


def cmd_nash_moser(cfg: RunConfig) -> Outcome:
    o = cfg.options
    exps = EstimateExponents(alpha=o["alpha"], beta=o["beta"], epsilon=o["epsilon"])
    grid = Grid.box([0.0], [1.0], 1.0 / o["cells"])
    ladder, smoother = NormLadder(grid, max(2, exps.beta)), Smoother(grid)
    x = grid.nodes[:, 0]
    f = o["amplitude"] * (0.5 * np.sin(2 * np.pi * x) + 0.4)
    model = MODEL_PROBLEMS[o["model"]]
    config = IterationConfig(alpha=exps.alpha, epsilon=exps.epsilon, max_iters=o["max_iters"], tol=cfg.tol)
    try:
        result = iterate(model.phi, model.right_inverse, np.zeros_like(f), f, ladder, smoother, config)
    except IterationFailure as exc:
        return False, {"error": str(exc), "iteration": exc.result.to_dict()}
    rng = np.random.default_rng(cfg.seed)
    samples = [(1e-2 * rng.standard_normal(grid.size), np.sin((k + 1) * np.pi * x)) for k in range(4)]
    tame = tame_check(model.right_inverse, samples, np.zeros_like(f), 0, exps.beta, ladder)
    return result.converged, {"exponents": asdict(exps), "iteration": result.to_dict(), "tame": tame.to_dict(),
                              "error_vs_exact": float(np.max(np.abs(result.u - model.exact(f))))}


def cmd_normal_form(cfg: RunConfig) -> Outcome:
    o = cfg.options
    if o["n"] == 2:
        sff, annih = ej.normal_form_2d(o["K"])
        return True, {"sff": sff.to_dict(), "annihilator": annih.to_dict()}
    sigma = o["sigma"]
    return True, {"sigma": sigma, "Hbar": ej.hbar_basis(sigma), "annihilator": ej.normal_annihilator_3d(sigma),
                  "signature_sweep": ej.signature_sweep(sigma)}


def _rhat(o: dict) -> np.ndarray:
    if o.get("rhat") is not None:
        vals = np.asarray(o["rhat"], dtype=float)
        if vals.size != 9:
            raise InputError("--rhat takes 9 numbers (row-major 3x3)")
        R = vals.reshape(3, 3)
        if np.max(np.abs(R - R.T)) > 1e-12:
            raise InputError("Rhat must be symmetric")
        return R
    if o.get("phi") is None:
        raise InputError("give --rhat or --phi")
    return ej.rhat_example(o["phi"], o["phi_sigma"]).matrix


def cmd_gauss_solve(cfg: RunConfig) -> Outcome:
    R = _rhat(cfg.options)
    curv = ej.CurvatureJet3D(R, np.zeros(15))
    sff = ej.solve_gauss_3d(curv, cfg.options["sigma"])
    resid = float(np.max(np.abs(ej.gauss_tensor(sff.input_H()) - curv.riemann())))
    return resid <= cfg.tol * max(1.0, float(np.max(np.abs(R)))), {
        "Rhat": R, "signature": ej.signature(R), "sff": sff.to_dict(), "gauss_residual": resid}


def cmd_rank_check(cfg: RunConfig) -> Outcome:
    cert = ej.gbar_rank_certificate(cfg.options["sigma"])
    return cert.certified, cert.to_dict()


def _curvature(cfg: RunConfig):
    o = cfg.options
    if cfg.input is not None:
        data = _read_json(cfg.input)
        try:
            jsonschema.validate(data, load_schema("curvature.json"))
            if "K" in data:
                o.update(n=2, K=decode_float(data["K"]), k1=decode_float(data.get("k1", 0)),
                         k2=decode_float(data.get("k2", 0)))
            else:
                o.update(n=3, rhat=decode_array(data["Rhat"]).ravel().tolist(),
                         r=decode_array(data.get("r", np.zeros(15))).tolist())
        except (jsonschema.ValidationError, ValueError) as exc:
            raise InputError(f"bad curvature spec: {exc}") from exc
    if o["n"] == 2:
        return ej.CurvatureJet2D(o["K"], o["k1"], o["k2"])
    r = np.zeros(15) if o.get("r") is None else np.asarray(o["r"], dtype=float)
    if r.size != 15:
        raise InputError("--r takes 15 numbers")
    return ej.CurvatureJet3D(_rhat(o), r)


def cmd_constraints_check(cfg: RunConfig) -> Outcome:
    o = cfg.options
    curv = _curvature(cfg)
    if o["n"] == 2:
        sff, annih = ej.normal_form_2d(o["K"])
    else:
        sff = ej.solve_gauss_3d(curv, o["sigma"])
        annih = ej.annihilator_basis(sff)
    sol = ej.solve_derivative_constraints(curv, sff, annih, o["lam"])
    return max(sol.residuals.values()) <= cfg.tol, sol.to_dict()


def cmd_pipeline(cfg: RunConfig) -> Outcome:
    o = cfg.options
    curv = _curvature(cfg)
    if o["n"] == 2:
        res = run_pipeline_2d(curv.K, curv.k1, curv.k2, o["lam"], o["mu"], samples=cfg.samples)
    else:
        res = run_pipeline_3d(curv.Rhat, curv.r, o["sigma"], o["lam"], o["mu"], samples=cfg.samples)
    return res.certified(max(cfg.tol, 1e-8)), res.to_dict()


def cmd_transform(cfg: RunConfig) -> Outcome:
    data = _read_json(cfg.input)
    data = data.get("result", data)
    try:
        annih = ej.AnnihilatorJet(decode_array(data["annihilator"]["A"]), decode_array(data["annihilator"]["a"]))
        s = data["sff"]
        sff = ej.SffJet(int(s["n"]), decode_array(s["H"]), decode_array(s["h"]),
                        sigma=decode_float(s["sigma"]) if "sigma" in s else None,
                        gamma=decode_array(s["gamma"]) if "gamma" in s else None,
                        frame=decode_array(s["frame"]))
        dGamma = decode_array(data["dGamma"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"input is not a pipeline report: missing {exc}") from exc
    lam, mu = cfg.options["lam"], cfg.options["mu"]
    lin = assemble_linearization(annih, dGamma, sff=sff)
    try:
        cov = solve_change_of_vars(lin, lam, mu)
    except ChangeOfVarsError as exc:
        return False, {"error": str(exc), "condition": exc.condition, "residual": exc.residual}
    q0, q1 = q_formulas(lin, cov)
    transformed = apply_transform(lin, cov)
    f0, f1 = fd_quadratic_forms(transformed)
    n = lin.n
    dev = max(float(np.max(np.abs(q0 - lam * np.eye(n)))), float(np.max(np.abs(q1 - mu * np.eye(n * n)))))
    fd = max(float(np.max(np.abs(q0 - f0))), float(np.max(np.abs(q1 - f1))))
    radius = ssp_radius(transformed, lam, mu, fraction=0.9, r_max=0.2, samples=64, iterations=12)
    passed = dev <= max(cfg.tol, 1e-8) and fd <= 1e-8
    out = {"change_of_vars": cov.to_dict(), "q0": q0, "q1": q1, "target_deviation": dev,
           "fd_agreement": fd, "positivity_radius": radius}
    if n == 2:
        out["staged_validation"] = _staged_validation(lin, lam, mu)
    return passed, out


def _staged_validation(lin, lam: float, mu: float) -> dict:
    """Informational: the two-stage solve on the same jets."""
    try:
        cov = solve_change_of_vars_staged(lin, lam, mu)
    except ChangeOfVarsError as exc:
        return {"status": "failed", "condition": exc.condition, "error": str(exc)}
    q0, q1 = q_formulas(lin, cov)
    dev = max(float(np.max(np.abs(q0 - lam * np.eye(2)))), float(np.max(np.abs(q1 - mu * np.eye(4)))))
    return {"status": "ok", "target_deviation": dev}


def cmd_acceptance(cfg: RunConfig) -> Outcome:
    report = acc.run_acceptance(determinism=not cfg.options["no_determinism"])
    jsonschema.validate(encode(report), load_schema("acceptance.json"))
    return report["passed"], report


COMMANDS: Dict[str, Callable[[RunConfig], Outcome]] = {
    "check-ssp": cmd_check_ssp,
    "ode-demo": cmd_ode_demo,
    "extend": cmd_extend,
    "solve-linear": cmd_solve_linear,
    "nash-moser": cmd_nash_moser,
    "normal-form": cmd_normal_form,
    "gauss-solve": cmd_gauss_solve,
    "rank-check": cmd_rank_check,
    "constraints-check": cmd_constraints_check,
    "transform": cmd_transform,
    "pipeline": cmd_pipeline,
    "acceptance": cmd_acceptance,
}


def _curvature_args(p: argparse.ArgumentParser, with_sigma: bool = True) -> None:
    p.add_argument("--n", type=int, choices=(2, 3), default=2)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--k1", type=float, default=0.0)
    p.add_argument("--k2", type=float, default=0.0)
    p.add_argument("--rhat", type=float, nargs=9)
    p.add_argument("--phi", type=float, help="equiangular Gram cosine for an example Rhat")
    p.add_argument("--phi-sigma", type=float, default=0.3, help="sigma used to build the example Rhat")
    p.add_argument("--r", type=float, nargs=15, help="curvature derivatives in the fixed order")
    if with_sigma:
        p.add_argument("--sigma", type=float, help="normal-form parameter (default from the sign rule)")
    p.add_argument("--lam", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--input")
    common.add_argument("--output")
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--samples", type=int, default=200)

    parser = _Parser(prog="sspembed", description="Strongly symmetric positive systems and embedding jets.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("check-ssp", parents=[common])
    p.add_argument("--example", choices=sorted(EXAMPLE_SYSTEMS), default="manufactured")
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--pconvex-radius", type=float)

    p = sub.add_parser("ode-demo", parents=[common])
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--b", type=float, default=2.0)
    p.add_argument("--rhs", choices=sorted(RHS_LIBRARY), default="const1")
    p.add_argument("--interval", type=float, nargs=2, default=[-1.0, 1.0], metavar=("LO", "HI"))
    p.add_argument("--grid", type=float, default=1e-3, help="grid spacing")

    p = sub.add_parser("extend", parents=[common])
    p.add_argument("--example", choices=sorted(EXAMPLE_SYSTEMS), default="ode")
    p.add_argument("--candidates", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    p.add_argument("--extension-samples", type=int, default=1000)

    p = sub.add_parser("solve-linear", parents=[common])
    p.add_argument("--dx", type=float, nargs="+", default=list(acc.ENERGY_GRIDS[:2]))
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--method", choices=("normal", "direct", "lsqr"), default="normal")
    p.add_argument("--csv", help="also write nodal values (dx, x1, x2, v) to this CSV file")

    p = sub.add_parser("nash-moser", parents=[common])
    p.add_argument("--model", choices=sorted(MODEL_PROBLEMS), default="quadratic")
    p.add_argument("--amplitude", type=float, default=1e-3)
    p.add_argument("--cells", type=int, default=400)
    p.add_argument("--alpha", type=int, default=0)
    p.add_argument("--beta", type=int)
    p.add_argument("--epsilon", type=float, default=1e-2)
    p.add_argument("--max-iters", type=int, default=8)

    p = sub.add_parser("normal-form", parents=[common])
    p.add_argument("--n", type=int, choices=(2, 3), default=2)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=ej.SIGMA_DEFAULT)

    p = sub.add_parser("gauss-solve", parents=[common])
    p.add_argument("--rhat", type=float, nargs=9)
    p.add_argument("--phi", type=float)
    p.add_argument("--phi-sigma", type=float, default=0.3)
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("rank-check", parents=[common])
    p.add_argument("--sigma", type=float, default=ej.SIGMA_DEFAULT)

    p = sub.add_parser("constraints-check", parents=[common])
    _curvature_args(p)

    p = sub.add_parser("transform", parents=[common])
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=1.0)

    p = sub.add_parser("pipeline", parents=[common])
    _curvature_args(p)
    p.add_argument("--mu", type=float, default=1.0)

    p = sub.add_parser("acceptance", parents=[common])
    p.add_argument("--no-determinism", action="store_true", help="skip the rerun behind criterion 12")
    return parser


def parse_config(argv: Sequence[str]) -> RunConfig:
    ns = vars(build_parser().parse_args(list(argv)))
    base = {k: ns.pop(k) for k in ("subcommand", "input", "output", "tol", "seed", "samples")}
    return RunConfig(options=ns, **base)


def run(cfg: RunConfig) -> Tuple[int, str]:
    """Execute one subcommand; returns the exit code and the serialised report."""
    passed, result = COMMANDS[cfg.subcommand](cfg)
    if cfg.subcommand == "acceptance":
        report = result
    else:
        report = {"schema": "report/v1", "command": cfg.subcommand, "passed": bool(passed),
                  "config": {k: v for k, v in asdict(cfg).items() if k not in ("output",)}, "result": result}
        jsonschema.validate(encode(report), load_schema("report.json"))
    return (EXIT_OK if passed else EXIT_FAILED), dumps(report)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        code, text = run(cfg)
    except InputError as exc:
        print(f"sspembed: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, np.linalg.LinAlgError, jsonschema.ValidationError) as exc:
        print(f"sspembed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
