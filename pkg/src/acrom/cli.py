"""Command-line pipeline: mesh -> offline -> pod -> rom -> diagnostics.

Stages communicate only through artifact files in the output directory,
so each stage can be rerun independently and produces byte-identical
outputs for identical inputs.  Every run writes a manifest recording the
input hashes, parameters, and wall clock.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad arguments
or missing upstream artifacts).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diag
from . import io as acio
from . import pod as podmod
from . import rom as rommod
from .fem import assemble_forcing, assemble_operators, build_dofmap
from .mesh import MeshError, generate_offset_cylinder_mesh, load_mesh, save_mesh
from .offline import (OfflineConfig, SolverError, load_snapshots, rotational_body_force,
                      run_offline, save_snapshots, zero_body_force)

USAGE_ERROR = 2
RUNTIME_ERROR = 1

ART = {
    "mesh": "mesh.txt",
    "snapshots": "snapshots.bin",
    "checkpoint": "checkpoint.bin",
    "basis_velocity": "basis_velocity.bin",
    "basis_pressure": "basis_pressure.bin",
}


class UsageError(Exception):
    pass


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise UsageError(f"missing required artifact {path} (run 'acrom {produced_by}' first)")
    return path


def _manifest(out: Path, sub: str, inputs: dict, params: dict, outputs: list, started: float):
    data = {
        "subcommand": sub,
        "inputs": {str(p): acio.file_sha256(p) for p in inputs.values()},
        "parameters": params,
        "outputs": [str(o) for o in outputs],
        "wall_clock_s": time.perf_counter() - started,
    }
    with open(out / f"manifest_{sub}.json", "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def _load_stage(out: Path, need_snapshots=False, need_bases=False):
    """Load the mesh plus optional snapshot/basis artifacts from out/."""
    mesh = load_mesh(_require(out / ART["mesh"], "mesh"))
    dm = build_dofmap(mesh)
    ops = assemble_operators(mesh, dm)
    result = {"mesh": mesh, "dofmap": dm, "ops": ops}
    if need_snapshots:
        result["snapshots"] = load_snapshots(
            _require(out / ART["snapshots"], "offline"), mesh=mesh, dofmap=dm
        )
    if need_bases:
        result["u_basis"] = podmod.load_basis(
            _require(out / ART["basis_velocity"], "pod"), ops.mass_v
        )
        result["p_basis"] = podmod.load_basis(
            _require(out / ART["basis_pressure"], "pod"), ops.mass_p
        )
    return result


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------


def cmd_mesh(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    m = cfg.section("mesh")
    mesh = generate_offset_cylinder_mesh(m["r1"], m["r2"], m["c1"], m["c2"], m["h"])
    path = out / ART["mesh"]
    save_mesh(mesh, path)
    if not quiet:
        print(f"mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {path}")
    _manifest(out, "mesh", {}, m, [path], started)
    return 0


def cmd_offline(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    o = cfg.section("offline")
    stage = _load_stage(out)
    ocfg = OfflineConfig(
        dt=o["dt"], t_end=o["t_end"], nu=o["nu"], eps=o["eps"], t_start=o["t_start"],
        snapshot_every=o["snapshot_every"], forcing=o["forcing"],
        initial_state=o["initial_state"], initial_file=o["initial_file"],
        checkpoint_every=o["checkpoint_every"],
    )
    progress = None
    if not quiet:
        def progress(step, total, t):
            if step % max(1, total // 10) == 0:
                print(f"offline: step {step}/{total} (t={t:.4g})")
    snaps = run_offline(ocfg, stage["mesh"], ops=stage["ops"],
                        checkpoint_path=out / ART["checkpoint"], progress=progress)
    save_snapshots(out / ART["snapshots"], snaps)

    forces = diag.drag_lift_functionals(stage["mesh"], stage["dofmap"])
    energy = 0.5 * np.einsum("in,in->n", snaps.U, stage["ops"].mass_v @ snaps.U)
    dl = np.array([forces.evaluate(snaps.U[:, j], snaps.P[:, j]) for j in range(snaps.n_snapshots)])
    acio.write_csv(out / "offline_traces.csv",
                   {"time": snaps.times, "energy": energy, "drag": dl[:, 0], "lift": dl[:, 1]})
    acio.write_csv(out / "offline_energy_residual.csv",
                   {"time": snaps.step_times, "energy_residual": snaps.energy_residual})
    if not quiet:
        print(f"offline: {snaps.n_snapshots} snapshots, max energy residual "
              f"{snaps.energy_residual.max():.3e}")
    _manifest(out, "offline", {"mesh": out / ART["mesh"]}, o,
              [out / ART["snapshots"], out / "offline_traces.csv",
               out / "offline_energy_residual.csv"], started)
    return 0


def cmd_pod(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    p = cfg.section("pod")
    stage = _load_stage(out, need_snapshots=True)
    snaps, ops = stage["snapshots"], stage["ops"]
    provenance = acio.file_sha256(out / ART["snapshots"])
    vb = podmod.compute_pod(snaps, "velocity", p["r_velocity"], ops.mass_v)
    pb = podmod.compute_pod(snaps, "pressure", p["r_pressure"], ops.mass_p)
    podmod.save_basis(out / ART["basis_velocity"], vb, provenance)
    podmod.save_basis(out / ART["basis_pressure"], pb, provenance)
    n = min(len(vb.eigenvalues), len(pb.eigenvalues))
    acio.write_csv(out / "singular_values.csv",
                   {"index": np.arange(1, n + 1),
                    "velocity_lambda": vb.eigenvalues[:n],
                    "pressure_sigma": pb.eigenvalues[:n]})
    if not quiet:
        print(f"pod: velocity rank {vb.rank}, pressure rank {pb.rank}, "
              f"kept R={vb.R}, M={pb.R}")
    _manifest(out, "pod", {"snapshots": out / ART["snapshots"]}, p,
              [out / ART["basis_velocity"], out / ART["basis_pressure"],
               out / "singular_values.csv"], started)
    return 0


def _rom_setup(cfg_rom: dict, stage: dict, r_max: int, m_max: int):
    """Shared model construction for the rom/convergence commands."""
    snaps, ops = stage["snapshots"], stage["ops"]
    u_basis, p_basis = stage["u_basis"], stage["p_basis"]
    if r_max > u_basis.R or m_max > p_basis.R:
        raise UsageError(
            f"requested R={r_max}/M={m_max} exceeds stored basis sizes "
            f"({u_basis.R}, {p_basis.R}); rerun 'acrom pod' with more modes"
        )
    dt = cfg_rom.get("dt", 0.0) or snaps.config.dt
    eps = cfg_rom.get("eps", 0.0) or snaps.config.eps
    f_vec = assemble_forcing(
        ops.mesh, ops.dofmap,
        rotational_body_force if snaps.config.forcing == "rotational" else zero_body_force,
    )
    model = rommod.build_reduced_model(u_basis, p_basis, ops, f_vec,
                                       nu=snaps.config.nu, eps=eps, dt=dt)
    return model


def cmd_rom(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    r = cfg.section("rom")
    stage = _load_stage(out, need_snapshots=True, need_bases=True)
    snaps = stage["snapshots"]
    r_list = acio.parse_int_list(r["r"])
    m_list = acio.parse_int_list(r["m"]) if r["m"] else list(r_list)
    if len(m_list) != len(r_list):
        raise UsageError("rom: r and m lists must have equal length")

    t_start = r["t_start"] if r["t_start"] >= 0 else float(snaps.times[0])
    t_end = r["t_end"] if r["t_end"] >= 0 else float(snaps.times[-1])
    j0 = int(np.argmin(np.abs(snaps.times - t_start)))
    if abs(snaps.times[j0] - t_start) > 1e-9:
        raise UsageError(f"rom t_start={t_start} is not a snapshot time")

    model = _rom_setup(r, stage, max(r_list), max(m_list))
    forces = diag.drag_lift_functionals(stage["mesh"], stage["dofmap"])
    gdu, gdp, glu, glp = forces.reduce(stage["u_basis"], stage["p_basis"])

    outputs = []
    for R, M in zip(r_list, m_list):
        sub = model.truncate(R, M)
        a0 = rommod.project_initial_state(stage["u_basis"], stage["p_basis"],
                                          snaps.U[:, j0], snaps.P[:, j0])
        traj = rommod.run_rom(sub, (a0[0][:R], a0[1][:M]), t_start, t_end)
        meta = {"R": R, "M": M, "dt": sub.dt, "eps": sub.eps, "nu": sub.nu,
                "t_start": t_start, "t_end": t_end}
        tpath = out / f"trajectory_R{R}_M{M}.bin"
        rommod.save_trajectory(tpath, traj, meta)
        energy = 0.5 * np.einsum("ni,ni->n", traj.a_u, traj.a_u)
        drag = traj.a_u @ gdu[:R] + traj.a_p @ gdp[:M]
        lift = traj.a_u @ glu[:R] + traj.a_p @ glp[:M]
        cpath = out / f"traces_R{R}_M{M}.csv"
        acio.write_csv(cpath, {
            "time": traj.times, "energy": energy, "drag": drag, "lift": lift,
            "energy_residual": np.concatenate([[0.0], traj.energy_residual]),
        })
        outputs += [tpath, cpath]
        if not quiet:
            print(f"rom R={R} M={M}: {traj.n_steps} steps, "
                  f"max energy residual {traj.energy_residual.max():.3e}")

    _manifest(out, "rom",
              {k: out / ART[k] for k in ("mesh", "snapshots", "basis_velocity", "basis_pressure")},
              r, outputs, started)
    return 0


def cmd_angles(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    stage = _load_stage(out, need_bases=True)
    ops = stage["ops"]
    u_basis, p_basis = stage["u_basis"], stage["p_basis"]
    counts = np.arange(1, min(u_basis.R, p_basis.R) + 1)
    rows = {"R": counts.astype(float), "alpha": [], "alpha_sq": [], "theta1": [],
            "beta": [], "div_rank": []}
    for n in counts:
        ub = podmod.PodBasis("velocity", u_basis.modes[:, :n], u_basis.eigenvalues, int(n), ops.mass_v)
        pb = podmod.PodBasis("pressure", p_basis.modes[:, :n], p_basis.eigenvalues, int(n), ops.mass_p)
        rep = diag.principal_angle(ub, pb, ops)
        rows["alpha"].append(rep.alpha)
        rows["alpha_sq"].append(rep.alpha ** 2)
        rows["theta1"].append(rep.theta1)
        rows["beta"].append(rep.infsup_beta)
        rows["div_rank"].append(float(rep.div_rank))
    acio.write_csv(out / "angle_infsup.csv", rows)
    if not quiet:
        print(f"angles: R=M=1..{counts[-1]} -> angle_infsup.csv")
    _manifest(out, "angles",
              {k: out / ART[k] for k in ("mesh", "basis_velocity", "basis_pressure")},
              {}, [out / "angle_infsup.csv"], started)
    return 0


def cmd_convergence(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    c = cfg.section("convergence")
    stage = _load_stage(out, need_snapshots=True, need_bases=True)
    snaps, ops = stage["snapshots"], stage["ops"]
    dts = acio.parse_float_list(c["dts"])
    if not dts:
        raise UsageError("convergence: empty dt ladder")
    R = c["r"]
    M = c["m"] or R
    model = _rom_setup(c, stage, R, M).truncate(R, M)
    u_basis, p_basis = stage["u_basis"], stage["p_basis"]

    t0 = float(snaps.times[0])
    t_end = t0 + c["window"]
    a0_full = rommod.project_initial_state(u_basis, p_basis, snaps.U[:, 0], snaps.P[:, 0])
    a0 = (a0_full[0][:R], a0_full[1][:M])

    def one_run(dt):
        n = int(math.floor(c["window"] / dt + 1e-9))
        traj = rommod.run_rom(model.with_dt(dt), a0, t0, t0 + n * dt)
        rec_u = u_basis.modes[:, :R] @ traj.a_u.T
        rec_p = p_basis.modes[:, :M] @ traj.a_p.T
        eu, _ = diag.l2l2_relative_error(traj.times, rec_u, snaps.times, snaps.U, ops.mass_v)
        ep, _ = diag.l2l2_relative_error(traj.times, rec_p, snaps.times, snaps.P, ops.mass_p)
        return eu, ep

    workers = max(1, int(os.environ.get("ACROM_THREADS", "1") or "1"))
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(one_run, dts))

    report = diag.ErrorReport(
        dts=np.array(dts),
        velocity_errors=np.array([r[0] for r in results]),
        pressure_errors=np.array([r[1] for r in results]),
        velocity_order=diag.fit_order(dts, [r[0] for r in results]),
        pressure_order=diag.fit_order(dts, [r[1] for r in results]),
    )
    acio.write_csv(out / "convergence.csv",
                   {"dt": report.dts, "err_velocity": report.velocity_errors,
                    "err_pressure": report.pressure_errors})
    acio.write_csv(out / "convergence_orders.csv", {
        "field": np.array(["velocity", "pressure"]),
        "order": np.array([report.velocity_order if report.velocity_order is not None else np.nan,
                           report.pressure_order if report.pressure_order is not None else np.nan]),
        "defined": np.array([int(report.velocity_order is not None),
                             int(report.pressure_order is not None)]),
    })
    if not quiet:
        print(f"convergence: orders velocity={report.velocity_order} "
              f"pressure={report.pressure_order}")
    _manifest(out, "convergence",
              {k: out / ART[k] for k in ("mesh", "snapshots", "basis_velocity", "basis_pressure")},
              c, [out / "convergence.csv", out / "convergence_orders.csv"], started)
    return 0


def cmd_report(cfg: acio.Config, out: Path, quiet: bool) -> int:
    started = time.perf_counter()
    stage = _load_stage(out, need_snapshots=True, need_bases=True)
    snaps, ops = stage["snapshots"], stage["ops"]
    rep_dir = out / "report"
    rep_dir.mkdir(exist_ok=True)
    outputs = []

    # singular values (recomputed CSV is byte-identical to the pod stage's)
    src = _require(out / "singular_values.csv", "pod")
    (rep_dir / "singular_values.csv").write_bytes(src.read_bytes())
    outputs.append(rep_dir / "singular_values.csv")

    # merged traces: reference plus every trajectory with matching times
    ref = acio.read_csv(_require(out / "offline_traces.csv", "offline"))
    merged = {"time": ref["time"], "ref_energy": ref["energy"],
              "ref_drag": ref["drag"], "ref_lift": ref["lift"]}
    for tpath in sorted(out.glob("traces_R*_M*.csv")):
        series = tpath.stem.replace("traces_", "")
        data = acio.read_csv(tpath)
        if len(data["time"]) != len(ref["time"]) or np.abs(data["time"] - ref["time"]).max() > 1e-9:
            raise UsageError(
                f"{tpath.name}: trajectory times do not match the snapshot times; "
                "rerun 'acrom rom' at the offline stride to include it in the report"
            )
        for col in ("energy", "drag", "lift"):
            merged[f"{series}_{col}"] = data[col]
    acio.write_csv(rep_dir / "traces.csv", merged)
    outputs.append(rep_dir / "traces.csv")

    for name in ("angle_infsup.csv", "convergence.csv", "convergence_orders.csv"):
        src = out / name
        if src.exists():
            (rep_dir / name).write_bytes(src.read_bytes())
            outputs.append(rep_dir / name)

    # divergence samples at the vertices: leading modes plus the last snapshot
    u_basis = stage["u_basis"]
    cols = {"x": stage["mesh"].vertices[:, 0], "y": stage["mesh"].vertices[:, 1]}
    for k in range(min(6, u_basis.R)):
        cols[f"mode_{k + 1}"] = diag.divergence_field(u_basis.modes[:, k], ops)
    cols["snapshot_last"] = diag.divergence_field(snaps.U[:, -1], ops)
    acio.write_csv(rep_dir / "divergence_modes.csv", cols)
    outputs.append(rep_dir / "divergence_modes.csv")

    if not quiet:
        print(f"report: {len(outputs)} CSVs -> {rep_dir}")
    _manifest(out, "report", {"snapshots": out / ART["snapshots"]}, {}, outputs, started)
    return 0


# ---------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------

_COMMANDS = {
    "mesh": cmd_mesh,
    "offline": cmd_offline,
    "pod": cmd_pod,
    "rom": cmd_rom,
    "angles": cmd_angles,
    "convergence": cmd_convergence,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="acrom",
        description="Artificial-compression reduced order modeling pipeline",
    )
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="sectioned key=value config file")
    parser.add_argument("--out", required=True, help="artifact directory")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = acio.parse_config(args.config)
    except FileNotFoundError:
        print(f"acrom: config file not found: {args.config}", file=sys.stderr)
        return USAGE_ERROR
    except acio.ConfigError as e:
        print(f"acrom: {e}", file=sys.stderr)
        return USAGE_ERROR

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"acrom: cannot create output directory {out}: {e}", file=sys.stderr)
        return USAGE_ERROR

    try:
        return _COMMANDS[args.subcommand](cfg, out, args.quiet)
    except (UsageError, acio.ConfigError) as e:
        print(f"acrom: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (MeshError, SolverError, acio.ArtifactError, podmod.PodRankError, ValueError) as e:
        print(f"acrom: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
