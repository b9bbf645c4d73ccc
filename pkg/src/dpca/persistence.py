"""Reading and writing panels, fitted models and study results."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import Convergence, DpcComponent, DpcModel, SeriesPanel, SolverConfig
from .errors import InputError, ShapeError
from .robust import MScaleSpec, RobustOptions
from .simulation import StudyResult, render_table

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLOAT_FORMAT = "%.17g"

_UNSAFE_FILENAME = re.compile(r"[^A-Za-z0-9._-]+")


def read_panel(path: Path) -> SeriesPanel:
    """Load a CSV panel: one header row of series labels, one row per observation.

    Raises:
        InputError: If the file is empty, ragged, or holds a cell that is not a
            finite number (the message names the data row and column)
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise InputError(f"{path}: file not found") from e
    except pd.errors.EmptyDataError as e:
        raise InputError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        raise InputError(f"{path}: malformed CSV: {e}") from e

    if frame.shape[1] == 0:
        raise InputError(f"{path}: no columns in header")
    if frame.shape[0] == 0:
        raise InputError(f"{path}: header present but no data rows")

    values = np.empty(frame.shape, dtype=float)
    for col, label in enumerate(frame.columns):
        numeric = pd.to_numeric(frame[label].str.strip(), errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(numeric)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise InputError(
                f"{path}: row {row + 1}, column '{label}': cannot use '{frame[label].iloc[row]}' as a finite number"
            )
        values[:, col] = numeric
    logger.info(f"Read {frame.shape[0]}x{frame.shape[1]} panel from {path}")
    return SeriesPanel(values, tuple(str(label) for label in frame.columns))


def write_panel(panel: SeriesPanel, path: Path) -> None:
    """Write a panel as CSV with 17 significant digits per cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(panel.values, columns=list(panel.labels))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {panel.T}x{panel.m} panel to {path}")


def file_digest(path: Path) -> str:
    """SHA-256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _floats(array: np.ndarray) -> list:
    return np.asarray(array, dtype=float).tolist()


def component_to_dict(component: DpcComponent) -> dict:
    return {
        "k": component.k,
        "f": _floats(component.f),
        "beta": _floats(component.beta),
        "alpha": _floats(component.alpha),
        "convergence": component.convergence.to_dict(),
    }


def component_from_dict(data: dict, scales: list | None = None) -> DpcComponent:
    return DpcComponent(
        k=int(data["k"]),
        f=np.array(data["f"], dtype=float),
        beta=np.array(data["beta"], dtype=float),
        alpha=np.array(data["alpha"], dtype=float),
        convergence=Convergence.from_dict(data["convergence"]),
        scales=None if scales is None else np.array(scales, dtype=float),
    )


@dataclass(frozen=True, eq=False)
class ModelFile:
    """A fitted model as stored on disk.

    Residual panels are not stored; ``to_model`` recomputes them from the panel.
    """

    config: SolverConfig
    components: tuple[DpcComponent, ...]
    mscale: MScaleSpec | None = None
    robust_options: RobustOptions | None = None
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def p(self) -> int:
        return len(self.components)

    @classmethod
    def from_model(
        cls,
        model: DpcModel,
        config: SolverConfig,
        input_sha256: str | None = None,
        created: str | None = None,
    ) -> ModelFile:
        provenance = {"input_sha256": input_sha256, "seed": config.seed, "created": created}
        return cls(
            config=config,
            components=model.components,
            mscale=model.mscale,
            robust_options=model.robust_options,
            provenance=provenance,
        )

    def to_model(self, panel: SeriesPanel) -> DpcModel:
        """Rebuild the model with residual panels computed on ``panel``.

        Raises:
            ShapeError: If the panel does not match the stored components
        """
        residual = panel
        residuals = []
        for index, component in enumerate(self.components):
            if component.m != panel.m or component.T != panel.T:
                raise ShapeError(
                    f"component {index + 1} was fitted on a {component.T}x{component.m} panel, "
                    f"got {panel.T}x{panel.m}"
                )
            residual = residual.with_values(residual.values - component.reconstruct())
            residuals.append(residual)
        return DpcModel(self.components, tuple(residuals), self.mscale, self.robust_options)

    def to_dict(self) -> dict:
        robust = None
        if self.mscale is not None:
            options = self.robust_options or RobustOptions()
            robust = {
                **self.mscale.to_dict(),
                **options.to_dict(),
                "scales": [_floats(c.scales) if c.scales is not None else None for c in self.components],
            }
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "components": [component_to_dict(c) for c in self.components],
            "robust": robust,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ModelFile:
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise InputError(f"unsupported model format version {version!r}, expected {FORMAT_VERSION}")
        robust = data.get("robust")
        scales = robust["scales"] if robust else [None] * len(data["components"])
        components = tuple(component_from_dict(c, s) for c, s in zip(data["components"], scales))
        return cls(
            config=SolverConfig.from_dict(data["config"]),
            components=components,
            mscale=MScaleSpec.from_dict(robust) if robust else None,
            robust_options=RobustOptions.from_dict(robust) if robust else None,
            provenance=dict(data.get("provenance", {})),
            format_version=version,
        )


def save_model(model_file: ModelFile, path: Path) -> None:
    """Write a model file as JSON; floats use the shortest round-trip representation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(model_file.to_dict(), f, indent=2)
        f.write("\n")
    logger.info(f"Saved model with {model_file.p} component(s) to {path}")


def load_model(path: Path) -> ModelFile:
    """Load a model file.

    Raises:
        InputError: If the file is missing, not JSON, or of an unknown format
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"model file '{path}' not found")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not a JSON model file: {e}") from e
    try:
        return ModelFile.from_dict(data)
    except (KeyError, TypeError) as e:
        raise InputError(f"{path}: incomplete model file: {e}") from e


def _plot_file_stem(label: str, j: int, used: set[str]) -> str:
    stem = _UNSAFE_FILENAME.sub("_", str(label)).lstrip(".")
    if not stem:
        stem = f"series{j + 1}"
    if stem in used:
        stem = f"{stem}_{j + 1}"
    used.add(stem)
    return stem


def write_plot_data(panel: SeriesPanel, reconstruction: SeriesPanel, out_dir: Path) -> list[Path]:
    """One CSV per series with columns t, original, reconstructed.

    Files are named after the series labels with path separators and other
    unsafe characters replaced by "_"; the column number is appended when
    two labels map to the same name.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    used: set[str] = set()
    t = np.arange(1, panel.T + 1)
    for j, label in enumerate(panel.labels):
        path = out_dir / f"{_plot_file_stem(label, j, used)}.csv"
        frame = pd.DataFrame(
            {"t": t, "original": panel.values[:, j], "reconstructed": reconstruction.values[:, j]}
        )
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        paths.append(path)
    logger.info(f"Wrote plot data for {panel.m} series to {out_dir}")
    return paths


def write_results(result: StudyResult, out_dir: Path) -> dict[str, Path]:
    """Write results.csv, results.json and results.txt for a study."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "results.csv",
        "json": out_dir / "results.json",
        "text": out_dir / "results.txt",
    }
    result.table.to_csv(paths["csv"], index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    payload = {
        "format_version": FORMAT_VERSION,
        "config": result.config.to_dict(),
        "results": _records(result.table),
        "replications": _records(result.records),
    }
    with open(paths["json"], "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    paths["text"].write_text(render_table(result.table) + "\n")
    logger.info(f"Wrote study results to {out_dir}")
    return paths


def _records(frame: pd.DataFrame) -> list[dict]:
    records = []
    for row in frame.to_dict(orient="records"):
        records.append({key: _plain(value) for key, value in row.items()})
    return records


def _plain(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if np.isnan(value) else value
    return value
