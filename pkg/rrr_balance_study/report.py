"""
Report artifacts: CSV tables (17 significant digits, header row), optional SVG figures, the run manifest and the
human-readable summary. Everything here is a pure function of its inputs so two runs of the same study write
byte-identical CSV files.
"""

import csv
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from rrr_balance_study.rrr_balance_study_config import CSV_DIGITS, SUMMARY_DIGITS
from rrr_balance_study.utils import format_significant

logger = logging.getLogger(__name__)

SVG_SALT = "rrr-balance-study"
VERSIONED_PACKAGES = ("numpy", "scipy", "pydantic", "python-dotenv", "matplotlib")


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_significant(float(value), CSV_DIGITS)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open("r", encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        header = next(reader)
        return header, list(reader)


def read_numeric_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """
    A table whose cells are all numbers, as a float array.
    """
    header, rows = read_csv(path)
    return header, np.array([[float(cell) for cell in row] for row in rows], dtype=float).reshape(-1, len(header))


@contextmanager
def staged_output(out_dir: Path) -> Iterator[Path]:
    """
    Yield a scratch directory next to `out_dir`. Files written there are moved into `out_dir` only when the block
    finishes; on an exception the scratch directory is removed and `out_dir` is left as it was.
    """
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-", dir=out_dir.parent))
    try:
        yield scratch
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    out_dir.mkdir(parents=True, exist_ok=True)
    for item in sorted(scratch.iterdir()):
        os.replace(item, out_dir / item.name)
    shutil.rmtree(scratch, ignore_errors=True)


def _svg_figure():
    import matplotlib  # pylint: disable=import-outside-toplevel

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt  # pylint: disable=import-outside-toplevel

    plt.rcParams["svg.hashsalt"] = SVG_SALT
    return plt


def _save_svg(plt, fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_contour(grid, path: Path, svg: bool = False, title: str = "") -> Path:
    """
    (x, y, ratio) rows of a torque-ratio field, with the per-leg ratios alongside; NaN marks points that are
    infeasible or whose unbalanced torque is negligible.
    """
    if len(grid.points) == 0:
        raise ValueError("empty torque-ratio grid")
    path = Path(path)
    rows = ((x, y, ratio, *legs) for (x, y), ratio, legs in zip(grid.points, grid.norm_ratio, grid.leg_ratio))
    write_csv(path, ("x", "y", "ratio", "ratio_leg1", "ratio_leg2", "ratio_leg3"), rows)
    if svg:
        plt = _svg_figure()
        fig, ax = plt.subplots(figsize=(5, 4))
        shown = ax.scatter(grid.points[:, 0], grid.points[:, 1], c=grid.norm_ratio, s=12, marker="s", cmap="viridis")
        fig.colorbar(shown, ax=ax, label="||tau|| / ||tau_0||")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title(title)
        _save_svg(plt, fig, path.with_suffix(".svg"))
    return path


def emit_boundaries(workspace, out_dir: Path, svg: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    boundary = workspace.boundary_points()
    sub = workspace.sub_boundary_points() if workspace.sub_radii is not None else np.full_like(boundary, np.nan)
    sub_radii = workspace.sub_radii if workspace.sub_radii is not None else np.full(len(boundary), np.nan)
    paths = [
        write_csv(
            out_dir / "workspace_boundary.csv",
            ("azimuth", "radius", "x", "y", "sub_radius", "sub_x", "sub_y"),
            zip(workspace.azimuths, workspace.radii, boundary[:, 0], boundary[:, 1], sub_radii, sub[:, 0], sub[:, 1]),
        ),
        write_csv(
            out_dir / "workspace_orientations.csv",
            ("gamma", "azimuth", "radius"),
            (
                (gamma, azimuth, radius)
                for gamma, radii in zip(workspace.orientations, workspace.orientation_radii)
                for azimuth, radius in zip(workspace.azimuths, radii)
            ),
        ),
    ]
    if svg:
        plt = _svg_figure()
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(boundary[:, 0], boundary[:, 1], "k-", label="dexterous workspace")
        if workspace.sub_radii is not None:
            ax.plot(sub[:, 0], sub[:, 1], "r--", label="task sub-workspace")
        ax.set_aspect("equal")
        ax.legend(loc="best")
        _save_svg(plt, fig, out_dir / "workspace_boundary.svg")
    return paths


def emit_placement(diagnostics, path: Path) -> Path:
    return write_csv(
        path,
        ("x", "y", "gamma", "reduction_percent", "center_torque", "status"),
        (
            (
                c.center[0],
                c.center[1],
                c.gamma,
                c.reduction,
                c.center_torque,
                "best" if i == diagnostics.best_index else ("ok" if c.evaluated else c.error),
            )
            for i, c in enumerate(diagnostics.candidates)
        ),
    )


def emit_profiles(poses: np.ndarray, tables: Mapping[str, np.ndarray], path: Path, svg: bool = False) -> Path:
    """
    Torques along the task spiral, one row per path point: pose, then the three joint torques and the torque norm
    for every labelled table (Mode0, Mode1, ..., Cam).
    """
    header = ["j", "x", "y", "gamma"]
    for label in tables:
        header += [f"{label}_tau1", f"{label}_tau2", f"{label}_tau3", f"{label}_norm"]
    columns = [np.arange(len(poses)), poses[:, 0], poses[:, 1], poses[:, 2]]
    for table in tables.values():
        columns += [table[:, 0], table[:, 1], table[:, 2], np.linalg.norm(table, axis=1)]
    write_csv(path, header, zip(*columns))
    if svg:
        plt = _svg_figure()
        fig, ax = plt.subplots(figsize=(7, 4))
        for label, table in tables.items():
            ax.plot(np.linalg.norm(table, axis=1), label=label, linewidth=0.8)
        ax.set_xlabel("path point")
        ax.set_ylabel("||tau|| [N m]")
        ax.legend(loc="best")
        _save_svg(plt, fig, Path(path).with_suffix(".svg"))
    return Path(path)


def emit_springs(results: Sequence, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    header = ["mode"]
    for name in ("k_q", "k_phi", "q_f", "phi_f"):
        header += [f"{name}{leg}" for leg in (1, 2, 3)]
    header += ["initial_cost", "final_cost", "improved", "start_index"]
    springs = write_csv(
        out_dir / "springs.csv",
        header,
        (
            (
                result.mode.label,
                *result.springs.k_q,
                *result.springs.k_phi,
                *result.springs.q_f,
                *result.springs.phi_f,
                result.initial_cost,
                result.final_cost,
                result.improved,
                result.start_index,
            )
            for result in results
        ),
    )
    history = write_csv(
        out_dir / "cost_history.csv",
        ("mode", "evaluation", "cost"),
        ((result.mode.label, i, value) for result in results for i, value in enumerate(result.cost_history)),
    )
    return [springs, history]


def emit_e_tau(layout: str, rows: Mapping[str, np.ndarray], path: Path) -> Path:
    return write_csv(
        path,
        ("layout", "design", "e_tau1", "e_tau2", "e_tau3"),
        ((layout, label, *values) for label, values in rows.items()),
    )


def emit_cams(designs: Sequence, out_dir: Path, svg: bool = False) -> list[Path]:
    """
    Modal fit table plus, per designed cam, its (phi~, g) samples and a closed outline.
    """
    out_dir = Path(out_dir)
    built = [design for design in designs if design is not None]
    order = max((design.fit.order for design in built), default=0)
    header = [
        "leg",
        *(f"b{i}" for i in range(order + 1)),
        *("alpha_min", "alpha_max", "mount_sign", "case", "k", "rms_error"),
    ]
    rows = []
    for design in built:
        coeffs = np.zeros(order + 1)
        coeffs[: len(design.fit.coeffs)] = design.fit.coeffs
        rows.append(
            (
                design.leg + 1,
                *coeffs,
                *design.alpha_range,
                design.mount_sign,
                int(design.geom.case),
                design.geom.k,
                design.rms_error,
            )
        )
    paths = [write_csv(out_dir / "modal_fit.csv", header, rows)]
    for design in built:
        leg = design.leg + 1
        profile_rows = zip(design.profile.phis, design.profile.radii)
        paths.append(write_csv(out_dir / f"cam_profile_leg{leg}.csv", ("phi_tilde", "g"), profile_rows))
        outline = design.profile.polyline()
        paths.append(write_csv(out_dir / f"cam_polyline_leg{leg}.csv", ("x", "y"), outline))
        if svg:
            plt = _svg_figure()
            fig, ax = plt.subplots(figsize=(4, 4))
            ax.plot(outline[:, 0], outline[:, 1], "k-")
            ax.add_patch(plt.Circle((design.geom.a, 0.0), design.geom.r, fill=False, color="tab:blue"))
            ax.set_aspect("equal")
            ax.set_title(f"cam, leg {leg}")
            _save_svg(plt, fig, out_dir / f"cam_profile_leg{leg}.svg")
    return paths


def package_versions() -> dict[str, Optional[str]]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def emit_manifest(path: Path, config_sha256: str, study: Mapping[str, Any], timings: Mapping[str, float]) -> Path:
    """
    JSON manifest: the config hash, package versions, study facts the summary echoes and stage timings.
    """
    manifest = {
        "config_sha256": config_sha256,
        "versions": package_versions(),
        "study": dict(study),
        "timings_s": {stage: round(seconds, 3) for stage, seconds in timings.items()},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def _fmt(value: Any) -> str:
    try:
        return format_significant(float(value), SUMMARY_DIGITS)
    except (TypeError, ValueError):
        return str(value)


def render_summary(out_dir: Path) -> str:
    """
    The summary text of an output directory, rebuilt from its manifest and e_tau table.
    """
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    study = manifest.get("study", {})
    lines = [
        f"study {study.get('name', '?')} ({study.get('layout', '?')} layout), config sha256 "
        f"{manifest.get('config_sha256', '?')[:12]}",
    ]
    placement = study.get("placement")
    if placement:
        lines.append(
            f"task center ({_fmt(placement['x'])}, {_fmt(placement['y'])}) m, gamma {_fmt(placement['gamma_deg'])} deg"
        )
    cams = study.get("cams")
    if cams:
        lines += ["", "Cam design constants", f"{'leg':<6}{'q0 [rad]':>12}{'a [m]':>10}{'u_t [m]':>10}{'r [m]':>10}"]
        for leg in range(3):
            lines.append(
                f"{leg + 1:<6}{_fmt(cams['q0'][leg]):>12}{_fmt(cams['a']):>10}{_fmt(cams['u_t'][leg]):>10}"
                f"{_fmt(cams['r']):>10}"
            )
    e_tau_path = out_dir / "e_tau.csv"
    if e_tau_path.exists():
        _, rows = read_csv(e_tau_path)
        lines += ["", "e_tau per leg", f"{'design':<10}{'e_tau1':>10}{'e_tau2':>10}{'e_tau3':>10}"]
        for _, label, *values in rows:
            lines.append(f"{label:<10}" + "".join(f"{_fmt(value):>10}" for value in values))
    return "\n".join(lines) + "\n"


def emit_summary(out_dir: Path, target_dir: Optional[Path] = None) -> Path:
    """
    Write summary.txt. The source files are read from `out_dir`, the summary goes to `target_dir` (default the
    same directory).
    """
    text = render_summary(out_dir)
    path = Path(target_dir or out_dir) / "summary.txt"
    path.write_text(text, encoding="utf-8")
    return path
