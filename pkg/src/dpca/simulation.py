"""Simulated panels, outlier contamination and the Monte Carlo comparison study.

Random numbers come from the counter-based Philox generator. A stream is
identified by (seed, replication, purpose), so every replication draws the
same numbers whatever the number of worker threads.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .baselines import SmoothingSpec, bdpc_fit, bdpc_reconstruct, opc_fit, opc_reconstruct_lagged
from .core import SeriesPanel, SolverConfig, lead_matrix, panel_mse
from .errors import ConfigError, DpcError
from .robust import MScaleSpec, fit_s_component, srs_of_residuals
from .solver import fit_component

logger = logging.getLogger(__name__)

METHOD_FAMILIES: tuple[str, ...] = ("OPC", "DPC", "BDPC", "SDPC")
GENERATORS: tuple[str, ...] = ("s4", "factor")
PANEL_STREAM = 0
CONTAMINATION_STREAM = 1

_METHOD_PATTERN = re.compile(r"^(OPC|DPC|BDPC|SDPC)_(\d+)$")


def make_rng(seed: int, *streams: int) -> np.random.Generator:
    """Philox generator for the stream (seed, *streams)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, streams)])))


def generate_panel(T: int, seed: int, replication: int = 0) -> SeriesPanel:
    """Three series sharing one white-noise source at successive leads.

    z[t, i] = v[t + i] + 0.1 * w[t, i] for i = 0, 1, 2 with v of length T+2 and
    v, w independent standard normal.
    """
    if T < 1:
        raise ConfigError(f"T must be at least 1, got {T}")
    rng = make_rng(seed, replication, PANEL_STREAM)
    v = rng.standard_normal(T + 2)
    w = rng.standard_normal((T, 3))
    values = np.column_stack([v[i : i + T] for i in range(3)]) + 0.1 * w
    return SeriesPanel(values)


def generate_factor_panel(
    T: int,
    m: int,
    lags: int = 1,
    noise: float = 0.5,
    seed: int = 0,
    replication: int = 0,
) -> SeriesPanel:
    """Panel driven by one white-noise factor with random loadings on its leads.

    z[t, j] = sum_i beta[j, i] f[t + i] + noise * e[t, j], i = 0..lags.
    """
    if T < 1 or m < 1 or lags < 0:
        raise ConfigError(f"need T >= 1, m >= 1 and lags >= 0, got T={T}, m={m}, lags={lags}")
    if noise < 0:
        raise ConfigError(f"noise level must be non-negative, got {noise}")
    rng = make_rng(seed, replication, PANEL_STREAM)
    factor = rng.standard_normal(T + lags)
    loadings = rng.standard_normal((m, lags + 1))
    errors = rng.standard_normal((T, m))
    return SeriesPanel(lead_matrix(factor, lags, T) @ loadings.T + noise * errors)


def contaminate(
    panel: SeriesPanel,
    prob: float,
    shift: float,
    seed: int,
    replication: int = 0,
) -> tuple[SeriesPanel, np.ndarray]:
    """Add ``shift`` to every cell independently with probability ``prob``.

    Returns:
        (contaminated panel, boolean T x m mask of the shifted cells)
    """
    if not 0.0 <= prob <= 1.0:
        raise ConfigError(f"contamination probability must lie in [0, 1], got {prob}")
    rng = make_rng(seed, replication, CONTAMINATION_STREAM)
    mask = rng.random(panel.values.shape) < prob
    return panel.with_values(panel.values + shift * mask), mask


def parse_method(method: str) -> tuple[str, int]:
    """Split "DPC_5" into ("DPC", 5)."""
    match = _METHOD_PATTERN.match(method.strip())
    if not match:
        raise ConfigError(f"unknown method '{method}', expected one of {METHOD_FAMILIES} followed by _<integer>")
    return match.group(1), int(match.group(2))


@dataclass
class McConfig:
    """Monte Carlo study settings.

    Args:
        T: Observations per panel
        replications: Number of simulated panels
        seed: Root seed of every random stream
        methods: Method strings such as "DPC_5", "OPC_10", "BDPC_10", "SDPC_1"
        generator: "s4" (three shifted white-noise series) or "factor"
        m, lags, noise: Shape of the "factor" generator
        contamination_prob, contamination_shift: Outlier model applied after generation
        epsilon, max_iter: Solver stopping rule
        smoothing_span: Daniell span for BDPC; None uses the default
        mscale: M-scale used for SDPC fits and for every SRS
    """

    T: int = 100
    replications: int = 50
    seed: int = 0
    methods: tuple[str, ...] = ("OPC_1", "OPC_5", "OPC_10", "DPC_1", "DPC_5", "DPC_10", "BDPC_10")
    generator: str = "s4"
    m: int = 10
    lags: int = 1
    noise: float = 0.5
    contamination_prob: float = 0.0
    contamination_shift: float = 20.0
    epsilon: float = 1e-4
    max_iter: int = 500
    smoothing_span: int | None = None
    mscale: MScaleSpec = field(default_factory=MScaleSpec)

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 20:
            raise ConfigError(f"T must be an integer >= 20, got {self.T}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError(f"replications must be a positive integer, got {self.replications}")
        if not self.methods:
            raise ConfigError("a study needs at least one method")
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown model '{self.generator}', expected one of {GENERATORS}")
        if not 0.0 <= self.contamination_prob <= 1.0:
            raise ConfigError(f"contamination probability must lie in [0, 1], got {self.contamination_prob}")
        self.methods = tuple(self.methods)
        for method in self.methods:
            parse_method(method)
        self.T = int(self.T)
        self.replications = int(self.replications)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "replications": self.replications,
            "seed": self.seed,
            "methods": list(self.methods),
            "generator": self.generator,
            "m": self.m,
            "lags": self.lags,
            "noise": self.noise,
            "contamination_prob": self.contamination_prob,
            "contamination_shift": self.contamination_shift,
            "epsilon": self.epsilon,
            "max_iter": self.max_iter,
            "smoothing_span": self.smoothing_span,
            "mscale": self.mscale.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> McConfig:
        defaults = cls.__dataclass_fields__
        kwargs = {name: data[name] for name in defaults if name in data and name != "mscale"}
        if "methods" in kwargs:
            kwargs["methods"] = tuple(kwargs["methods"])
        unknown = set(data) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown study settings: {sorted(unknown)}")
        return cls(mscale=MScaleSpec.from_dict(data.get("mscale", {})), **kwargs)


@dataclass(frozen=True, eq=False)
class StudyResult:
    """Per-replication records and the aggregated table of a study."""

    config: McConfig
    records: pd.DataFrame
    table: pd.DataFrame


RESULT_COLUMNS = [
    "method",
    "parameter",
    "T",
    "replications",
    "ok",
    "failed",
    "mean_mse",
    "se_mse",
    "mean_srs",
    "se_srs",
]


def simulate_panel(config: McConfig, replication: int) -> SeriesPanel:
    """Panel of one replication, contaminated when the study asks for it."""
    if config.generator == "s4":
        panel = generate_panel(config.T, config.seed, replication)
    else:
        panel = generate_factor_panel(config.T, config.m, config.lags, config.noise, config.seed, replication)
    if config.contamination_prob > 0:
        panel, _ = contaminate(
            panel, config.contamination_prob, config.contamination_shift, config.seed, replication
        )
    return panel


def method_residuals(panel: SeriesPanel, method: str, config: McConfig) -> np.ndarray:
    """Residuals of one method on one panel; OPC keeps only the rows where every lead exists."""
    family, parameter = parse_method(method)
    solver_config = SolverConfig(k=parameter, epsilon=config.epsilon, max_iter=config.max_iter)
    if family == "OPC":
        scores = opc_fit(panel, 1).scores[:, 0]
        fitted, _ = opc_reconstruct_lagged(panel, scores, parameter)
        return panel.values[: fitted.T] - fitted.values
    if family == "DPC":
        return panel.values - fit_component(panel, solver_config).reconstruct()
    if family == "SDPC":
        return panel.values - fit_s_component(panel, solver_config, config.mscale).reconstruct()
    model = bdpc_fit(panel, parameter, SmoothingSpec(span=config.smoothing_span))
    fitted, _ = bdpc_reconstruct(panel, model)
    return panel.values - fitted.values


def run_replication(config: McConfig, replication: int) -> list[dict]:
    """Fit every method on one simulated panel; failures are recorded, not raised."""
    panel = simulate_panel(config, replication)
    records = []
    for method in config.methods:
        family, parameter = parse_method(method)
        record = {"replication": replication, "method": family, "parameter": parameter}
        try:
            residuals = method_residuals(panel, method, config)
            record.update(mse=panel_mse(residuals), srs=srs_of_residuals(residuals, config.mscale), error="")
        except (DpcError, np.linalg.LinAlgError, RuntimeError) as e:
            logger.warning(f"Replication {replication}: {method} failed: {e}")
            record.update(mse=np.nan, srs=np.nan, error=str(e))
        records.append(record)
    return records


def _standard_error(values: pd.Series) -> float:
    n = values.shape[0]
    return float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")


def summarize(records: pd.DataFrame, config: McConfig) -> pd.DataFrame:
    """Mean and standard error of MSE and SRS per method, in the configured method order."""
    rows = []
    for method in config.methods:
        family, parameter = parse_method(method)
        subset = records[(records["method"] == family) & (records["parameter"] == parameter)]
        subset = subset.sort_values("replication")
        ok = subset[subset["error"] == ""]
        rows.append(
            {
                "method": family,
                "parameter": parameter,
                "T": config.T,
                "replications": config.replications,
                "ok": int(ok.shape[0]),
                "failed": int(subset.shape[0] - ok.shape[0]),
                "mean_mse": float(ok["mse"].mean()) if len(ok) else float("nan"),
                "se_mse": _standard_error(ok["mse"]),
                "mean_srs": float(ok["srs"].mean()) if len(ok) else float("nan"),
                "se_srs": _standard_error(ok["srs"]),
            }
        )
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def run_study(config: McConfig, threads: int = 1) -> StudyResult:
    """Run every replication and aggregate the reconstruction errors.

    Results do not depend on ``threads``: each replication owns its random
    stream and records are ordered by replication before aggregation.
    """
    threads = max(1, int(threads))
    logger.info(
        f"Monte Carlo study: T={config.T}, {config.replications} replications, "
        f"methods {', '.join(config.methods)}, {threads} thread(s)"
    )
    replications = range(config.replications)
    if threads == 1:
        batches = [run_replication(config, r) for r in replications]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            batches = list(executor.map(lambda r: run_replication(config, r), replications))

    records = pd.DataFrame([record for batch in batches for record in batch])
    records = records.sort_values(["method", "parameter", "replication"], kind="mergesort").reset_index(drop=True)
    table = summarize(records, config)
    failed = int(table["failed"].sum())
    if failed:
        logger.warning(f"{failed} method fits failed and were excluded from the averages")
    return StudyResult(config=config, records=records, table=table)


def render_table(table: pd.DataFrame) -> str:
    """Text table with one row per T and one column per method, families side by side.

    Each cell shows the mean MSE with its standard error in parentheses.
    """
    order = {family: i for i, family in enumerate(("DPC", "SDPC", "OPC", "BDPC"))}
    ordered = table.assign(_order=table["method"].map(order)).sort_values(["_order", "parameter"], kind="mergesort")
    columns = [f"{row.method}_{row.parameter}" for row in ordered.itertuples()]
    cells = {
        f"{row.method}_{row.parameter}": f"{row.mean_mse:.4f} ({row.se_mse:.4f})" for row in ordered.itertuples()
    }
    T = int(table["T"].iloc[0])
    frame = pd.DataFrame([cells], index=pd.Index([T], name="T"), columns=columns)
    lines = ["Mean square errors (standard errors)", frame.to_string()]
    failed = table[table["failed"] > 0]
    for row in failed.itertuples():
        lines.append(f"{row.method}_{row.parameter}: {row.failed} of {row.replications} fits failed")
    return "\n".join(lines)
