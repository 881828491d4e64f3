"""Config-driven orchestration: build the normalized factor stack, train the
configured models, and emit potential maps, metrics, figures, and a run
manifest.

The config is a flat INI-style file (see the synthetic generator for a
complete example): a ``[pipeline]`` section, one ``[factor:NAME]`` section
per evidential layer with a left-to-right processing ``chain``, and
``[mlp:NAME]`` / ``[anfis:NAME]`` model sections.
"""

from __future__ import annotations

import configparser
import hashlib
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import anfis as anfis_mod
from . import mlp as mlp_mod
from .evaluate import (
    DEFAULT_FRACTIONS,
    binarize,
    build_samples,
    confusion_from_vectors,
    kappa,
    pearson_r,
    rmse,
    split,
    write_metrics_report,
)
from .geochem import read_rockeval_csv, summarize_wells
from .geoprocess import (
    FuzzyParams,
    InputDataError,
    PointSample,
    bin_equal_interval,
    classify_threshold,
    curvature,
    distance_transform,
    fuzzy_normalize,
    idw_interpolate,
    kriging_interpolate,
    negate,
    read_features,
    read_point_samples,
    tri,
)
from .raster import Grid, assert_aligned, read_ascii_grid, write_ascii_grid


class ConfigError(ValueError):
    """Invalid pipeline configuration."""


@dataclass
class FactorConfig:
    name: str
    source: str
    kind: str  # grid | points | features | wells
    chain: list  # list of (step_name, args_dict)
    feature_kind: str = "fault_lines"
    index: str = ""  # wells only
    stat: str = "mean"  # wells only


@dataclass
class ModelConfig:
    name: str
    family: str  # mlp | anfis
    options: dict


@dataclass
class PipelineConfig:
    target: str
    out_dir: str
    seed: int
    fractions: tuple
    threshold: float
    factors: list
    models: list
    raw_text: str = ""


_CHAIN_STEPS = {"idw", "kriging", "distance", "tri", "curvature", "classify",
                "bin10", "negate", "fuzzy"}


def _parse_step(token: str):
    token = token.strip()
    m = re.fullmatch(r"([a-z_0-9]+)(?:\((.*)\))?", token)
    if not m:
        raise ConfigError(f"unparseable chain step {token!r}")
    name, argstr = m.group(1), m.group(2)
    if name not in _CHAIN_STEPS:
        raise ConfigError(f"unknown chain step {name!r}")
    args = {}
    pos = []
    if argstr:
        for part in argstr.split(","):
            part = part.strip()
            if "=" in part:
                k, v = part.split("=", 1)
                args[k.strip()] = v.strip()
            else:
                pos.append(part)
    args["_pos"] = pos
    return name, args


def parse_chain(text: str):
    steps = [_parse_step(tok) for tok in text.split("|") if tok.strip()]
    if not steps:
        raise ConfigError("empty processing chain")
    return steps


def load_config(path) -> PipelineConfig:
    """Parse a pipeline config file."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        raw = fh.read()
    try:
        cp.read_string(raw)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "pipeline" not in cp:
        raise ConfigError(f"{path}: missing [pipeline] section")
    pl = cp["pipeline"]
    try:
        fractions = tuple(float(v) for v in pl.get("fractions", "0.70,0.15,0.15").split(","))
        cfg = PipelineConfig(
            target=pl["target"],
            out_dir=pl.get("out_dir", "out"),
            seed=pl.getint("seed", 0),
            fractions=fractions,
            threshold=pl.getfloat("threshold", 0.5),
            factors=[],
            models=[],
            raw_text=raw,
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad [pipeline] section: {exc}") from None

    for section in cp.sections():
        if section.startswith("factor:"):
            s = cp[section]
            name = section.split(":", 1)[1]
            kind = s.get("kind", "grid")
            if kind not in ("grid", "points", "features", "wells"):
                raise ConfigError(f"factor {name}: unknown kind {kind!r}")
            if "source" not in s or "chain" not in s:
                raise ConfigError(f"factor {name}: needs 'source' and 'chain'")
            fc = FactorConfig(
                name=name,
                source=s["source"],
                kind=kind,
                chain=parse_chain(s["chain"]),
                feature_kind=s.get("feature_kind", "fault_lines"),
                index=s.get("index", ""),
                stat=s.get("stat", "mean"),
            )
            if kind == "wells":
                if fc.index not in ("OI", "PI", "PP", "HI", "Tmax", "TOC"):
                    raise ConfigError(f"factor {name}: bad wells index {fc.index!r}")
                if fc.stat not in ("mean", "max"):
                    raise ConfigError(f"factor {name}: stat must be mean or max")
            if fc.chain[-1][0] != "fuzzy":
                raise ConfigError(f"factor {name}: chain must end with a fuzzy step")
            cfg.factors.append(fc)
        elif section.startswith(("mlp:", "anfis:")):
            family, name = section.split(":", 1)
            cfg.models.append(ModelConfig(name=name, family=family,
                                          options=dict(cp[section])))
    if not cfg.factors:
        raise ConfigError(f"{path}: no [factor:*] sections")
    if not cfg.models:
        raise ConfigError(f"{path}: no model sections")
    return cfg


# ---------------------------------------------------------------------------
# factor chains


def _resolve_fuzzy(args, grid: Grid) -> FuzzyParams:
    pos = args.get("_pos", [])
    if not pos:
        raise ConfigError("fuzzy step needs a shape argument")
    shape = pos[0]
    vals = grid.valid_values()
    if len(pos) >= 2 and pos[1] == "auto":
        if vals.size == 0:
            raise InputDataError("fuzzy auto range on an all-nodata grid")
        if shape.startswith("linear"):
            a, b = float(vals.min()), float(vals.max())
            if a == b:
                b = a + 1.0
        else:
            positive = vals[vals > 0]
            a = float(positive.mean()) if positive.size else 1.0
            b = 5.0
    elif len(pos) >= 3:
        a, b = float(pos[1]), float(pos[2])
    else:
        raise ConfigError(f"fuzzy step needs 'auto' or explicit a, b: {pos}")
    return FuzzyParams(shape=shape, a=a, b=b)


def _run_chain(fc: FactorConfig, state, header, log: list) -> Grid:
    """Execute a factor chain left to right; ``state`` is (kind, payload)."""
    for step_name, args in fc.chain:
        kind, payload = state
        if step_name in ("idw", "kriging"):
            if kind != "points":
                raise ConfigError(f"factor {fc.name}: step {step_name} needs point input, has {kind}")
            if step_name == "idw":
                power = float(args.get("power", 2.0))
                nb = args.get("neighbors")
                grid = idw_interpolate(payload, header, power=power,
                                       max_neighbors=int(nb) if nb else None)
                log.append(f"  idw power={power}")
            else:
                grid = kriging_interpolate(
                    payload, header,
                    model=args.get("model", "spherical"),
                    nugget=float(args.get("nugget", 0.0)),
                    sill=float(args["sill"]) if "sill" in args else None,
                    vrange=float(args["range"]) if "range" in args else None,
                )
                log.append(f"  kriging model={args.get('model', 'spherical')}")
            state = ("grid", grid)
        elif step_name == "distance":
            if kind != "features":
                raise ConfigError(f"factor {fc.name}: step distance needs features, has {kind}")
            state = ("grid", distance_transform(payload, header))
            log.append("  distance")
        else:
            if kind != "grid":
                raise ConfigError(f"factor {fc.name}: step {step_name} needs grid input, has {kind}")
            if step_name == "tri":
                state = ("grid", tri(payload))
                log.append("  tri")
            elif step_name == "curvature":
                state = ("grid", curvature(payload))
                log.append("  curvature")
            elif step_name == "negate":
                state = ("grid", negate(payload))
                log.append("  negate")
            elif step_name == "bin10":
                state = ("grid", bin_equal_interval(payload, 10))
                log.append("  bin10")
            elif step_name == "classify":
                t = float(args["_pos"][0]) if args["_pos"] else 0.5
                state = ("grid", classify_threshold(payload, t))
                log.append(f"  classify threshold={t}")
            elif step_name == "fuzzy":
                params = _resolve_fuzzy(args, payload)
                state = ("grid", fuzzy_normalize(payload, params))
                log.append(f"  fuzzy {params.shape} a={params.a!r} b={params.b!r}")
    return state[1]


def _load_factor_input(fc: FactorConfig, header):
    if fc.kind == "grid":
        return ("grid", read_ascii_grid(fc.source))
    if fc.kind == "points":
        return ("points", read_point_samples(fc.source))
    if fc.kind == "features":
        return ("features", read_features(fc.source, fc.feature_kind))
    # wells: aggregate Rock-Eval records to one point per well
    summaries = summarize_wells(read_rockeval_csv(fc.source))
    samples = [
        PointSample(s.x, s.y, (s.mean if fc.stat == "mean" else s.max)[fc.index])
        for s in summaries
    ]
    return ("points", samples)


def build_factor_stack(cfg: PipelineConfig, header=None, logs=None):
    """Run every factor chain; returns the list of normalized grids.

    All outputs are asserted to lie in [0, 1] (ignoring nodata) and to be
    mutually aligned with the target grid.
    """
    if header is None:
        header = read_ascii_grid(cfg.target).header
    stack = []
    for fc in cfg.factors:
        log = [f"factor {fc.name} ({fc.kind} from {os.path.basename(fc.source)})"]
        state = _load_factor_input(fc, header)
        grid = _run_chain(fc, state, header, log)
        vals = grid.valid_values()
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise InputDataError(
                f"factor {fc.name}: normalized output outside [0, 1] "
                f"(range {vals.min()}..{vals.max()})"
            )
        log.append(
            f"  range {float(vals.min())!r}..{float(vals.max())!r}"
            if vals.size else "  all nodata"
        )
        stack.append(grid)
        if logs is not None:
            logs.append("\n".join(log))
    assert_aligned(stack)
    return stack


# ---------------------------------------------------------------------------
# model training


def _train_model(mc: ModelConfig, sm, sp):
    """Train one configured model; returns (predict_fn, summary_lines, save_fn)."""
    Xtr, ttr = sm.rows[sp.train_idx], sm.targets[sp.train_idx]
    Xte, tte = sm.rows[sp.test_idx], sm.targets[sp.test_idx]
    n_inputs = sm.rows.shape[1]
    opts = mc.options
    if mc.family == "mlp":
        hidden = tuple(int(v) for v in opts.get("hidden", "10").split(","))
        topology = mlp_mod.MlpTopology((n_inputs, *hidden, 1))
        tc = mlp_mod.TrainConfig(
            algorithm=opts.get("algorithm", "levenberg_marquardt"),
            learning_rate=float(opts.get("learning_rate", 0.5)),
            lm_lambda0=float(opts.get("lm_lambda0", 1e-3)),
            lm_lambda_factor=float(opts.get("lm_lambda_factor", 10.0)),
            max_epochs=int(opts.get("max_epochs", 100)),
            error_goal=float(opts.get("error_goal", 0.005)),
            rng_seed=int(opts.get("seed", 0)),
        )
        weights = mlp_mod.init_weights(topology, tc.rng_seed)
        train = list(zip(Xtr, ttr[:, None]))
        test = list(zip(Xte, tte[:, None]))
        if tc.algorithm == "levenberg_marquardt":
            model, history = mlp_mod.train_lm(weights, train, test, tc)
        else:
            model, history = mlp_mod.train_backprop(weights, train, test, tc)
        summary = [
            f"model {mc.name}: mlp topology={'x'.join(str(s) for s in topology.layer_sizes)} "
            f"algorithm={tc.algorithm}",
            f"  epochs_run={history[-1][0]} final_train_mse={history[-1][1]!r} "
            f"final_test_mse={history[-1][2]!r}",
        ]
        return (
            lambda stack: mlp_mod.predict_grid(model, stack),
            summary,
            lambda path: mlp_mod.save_mlp(model, path),
            history,
        )
    if mc.family == "anfis":
        cc = anfis_mod.ClusterConfig(
            radius=float(opts.get("radius", 0.5)),
            squash_factor=float(opts.get("squash_factor", 1.25)),
            accept_ratio=float(opts.get("accept_ratio", 0.5)),
            reject_ratio=float(opts.get("reject_ratio", 0.15)),
        )
        centers = anfis_mod.subtractive_cluster(Xtr, cc)
        model0 = anfis_mod.init_from_clusters(centers, Xtr, cc)
        model, history = anfis_mod.train_hybrid(
            model0, (Xtr, ttr), (Xte, tte),
            epochs=int(opts.get("epochs", 300)),
            eta=float(opts.get("learning_rate", 0.01)),
            error_goal=float(opts.get("error_goal", 0.005)),
        )
        summary = [
            f"model {mc.name}: anfis rules={model.n_rules} radius={cc.radius!r}",
            f"  epochs_run={history[-1][0]} final_train_mse={history[-1][1]!r} "
            f"final_test_mse={history[-1][2]!r}",
        ]
        return (
            lambda stack: anfis_mod.predict_grid(model, stack),
            summary,
            lambda path: anfis_mod.save_anfis(model, path),
            history,
        )
    raise ConfigError(f"unknown model family {mc.family!r}")


# ---------------------------------------------------------------------------
# rendering


def render_map(grid: Grid, path) -> None:
    """8-bit grayscale PGM: [min, max] scaled to [0, 255], nodata to 0."""
    z = grid.values
    valid = z != grid.nodata_value
    img = np.zeros(z.shape, dtype=np.uint8)
    if valid.any():
        lo, hi = z[valid].min(), z[valid].max()
        if hi > lo:
            img[valid] = np.round((z[valid] - lo) / (hi - lo) * 255).astype(np.uint8)
        else:
            img[valid] = 255
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{grid.ncols} {grid.nrows}\n255\n".encode())
        fh.write(img.tobytes())
    os.replace(tmp, path)


def render_figure(grid: Grid, path, title: str) -> None:
    """Matplotlib rendering of a grid with nodata masked out."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    z = np.ma.masked_equal(grid.values, grid.nodata_value)
    h = grid.header
    extent = (h.xll, h.xll + h.ncols * h.cellsize, h.yll, h.yll + h.nrows * h.cellsize)
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(z, cmap="viridis", extent=extent, origin="upper")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_xlabel("x (map units)")
    ax.set_ylabel("y (map units)")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "petromap"})
    plt.close(fig)


def render_history(histories, path) -> None:
    """Training-history curves for every model on one figure."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, history in histories:
        epochs = [h[0] for h in history]
        ax.plot(epochs, [h[1] for h in history], label=f"{name} train")
        ax.plot(epochs, [h[2] for h in history], "--", label=f"{name} test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "petromap"})
    plt.close(fig)


# ---------------------------------------------------------------------------
# the full run


def _atomic_write_text(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_grid_atomic(grid, path):
    tmp = str(path) + ".tmp"
    write_ascii_grid(grid, tmp)
    os.replace(tmp, path)


def run(cfg: PipelineConfig):
    """Execute the full pipeline; returns the manifest text.

    Writes per-model potential and binarized maps, metrics files, figures,
    a comparison table, and a deterministic run manifest.  Wall-clock
    timings go to a separate timings.txt so the manifest stays byte-stable
    across reruns.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    timings = []
    stage = "ingest"
    manifest = [
        f"petromap {__version__}",
        f"seed={cfg.seed} threshold={cfg.threshold!r} fractions={cfg.fractions}",
        "",
        "[config]",
        cfg.raw_text.rstrip(),
        "",
        "[factors]",
    ]
    try:
        t0 = time.perf_counter()
        target = read_ascii_grid(cfg.target)
        stage = "factor stack"
        factor_logs = []
        stack = build_factor_stack(cfg, header=target.header, logs=factor_logs)
        manifest.extend(factor_logs)
        timings.append(("factor_stack", time.perf_counter() - t0))

        stage = "sampling"
        t0 = time.perf_counter()
        sm = build_samples(stack, target, feature_names=[f.name for f in cfg.factors])
        sp = split(sm, cfg.fractions, cfg.seed)
        manifest += [
            "",
            "[samples]",
            f"cells={sm.n_samples} train={len(sp.train_idx)} "
            f"test={len(sp.test_idx)} validation={len(sp.val_idx)}",
        ]
        timings.append(("sampling", time.perf_counter() - t0))

        results = []
        histories = []
        manifest += ["", "[models]"]
        for mc in cfg.models:
            stage = f"training {mc.family}:{mc.name}"
            t0 = time.perf_counter()
            predict_fn, summary, save_fn, history = _train_model(mc, sm, sp)
            timings.append((f"train_{mc.name}", time.perf_counter() - t0))
            manifest.extend(summary)
            histories.append((mc.name, history))

            stage = f"evaluating {mc.family}:{mc.name}"
            t0 = time.perf_counter()
            potential = predict_fn(stack)
            binary = binarize(potential, cfg.threshold)

            vr, vc = sm.cell_index[sp.val_idx, 0], sm.cell_index[sp.val_idx, 1]
            pred_val = potential.values[vr, vc]
            obs_val = sm.targets[sp.val_idx]
            r = pearson_r(pred_val, obs_val)
            rm = rmse(pred_val, obs_val)
            cm = confusion_from_vectors(pred_val >= cfg.threshold, obs_val)
            kp = kappa(cm)

            base = os.path.join(cfg.out_dir, mc.name)
            _write_grid_atomic(potential, base + "_potential.asc")
            _write_grid_atomic(binary, base + "_binary.asc")
            render_map(potential, base + "_potential.pgm")
            render_figure(potential, base + "_potential.png",
                          f"{mc.name} oil potential")
            save_fn(base + f"_{mc.family}.model")
            write_metrics_report(base + "_metrics.txt", r, rm, kp, cm,
                                 cfg.seed, cfg.threshold)
            manifest.append(
                f"  validation r={r!r} rmse={rm!r} kappa={kp!r} "
                f"tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn}"
            )
            results.append((mc.name, rm, r, kp))
            timings.append((f"evaluate_{mc.name}", time.perf_counter() - t0))

        render_history(histories, os.path.join(cfg.out_dir, "training_history.png"))

        # comparison table in the style of the validation summary
        manifest += ["", "[comparison]"]
        table = [f"{'model':<20} {'RMS':>10} {'R':>10} {'Kappa':>10}"]
        for name, rm, r, kp in results:
            table.append(f"{name:<20} {rm:>10.4f} {r:>10.4f} {kp:>10.4f}")
        best = max(results, key=lambda t: t[3])
        table.append(f"best model by kappa: {best[0]}")
        manifest.extend(table)
        print("\n".join(table))
    except Exception as exc:
        manifest += ["", f"[aborted] stage={stage} error={exc}"]
        _atomic_write_text(os.path.join(cfg.out_dir, "manifest.txt"),
                           "\n".join(manifest) + "\n")
        raise

    manifest_text = "\n".join(manifest) + "\n"
    _atomic_write_text(os.path.join(cfg.out_dir, "manifest.txt"), manifest_text)
    _atomic_write_text(
        os.path.join(cfg.out_dir, "timings.txt"),
        "".join(f"{name}={dt:.3f}s\n" for name, dt in timings),
    )
    return manifest_text


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()
