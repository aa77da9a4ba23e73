"""Command-line interface: ``ssta gen-data | train | attack | attack-batch | saliency | metrics``.

Every command writes a JSON manifest next to its outputs.  Exit codes: 0 ok,
1 usage or invalid input, 2 I/O or file-format error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import logging
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .attack import AttackConfig, ssta_attack
from .dataset import CLASS_NAMES, generate_dataset, read_split, save_dataset
from .errors import DecodeError, FormatError, NumericalError
from .evaluation import PGD_LEVELS, PGD_STEPS, TARGET_ASR, PGDSettings, attack_record, pgd_ladder, run_batch
from .image import amplify_diff, load_image, save_image
from .manifest import aggregate, build_manifest, write_manifest
from .metrics import METRICS, metric_report
from .nn import TrainConfig, load_weights, save_weights, train
from .saliency import SALIENCY_METHODS, load_mask, mask_area_fraction, threshold_mask
from .warp import save_flow

log = logging.getLogger("ssta")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3
RECORD_COLUMNS = [
    "index", "input", "method", "label", "pred_before", "pred_after", "success", "iterations",
    "final_tau", "final_xi", "mask_area", *METRICS,
]  # fmt: skip


# ---------------------------------------------------------------- shared options


def _setup_logging(verbose):
    level = logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def out_dir_option(required=True):
    return click.option(
        "--out-dir", type=click.Path(file_okay=False, path_type=Path), required=required, help="Output directory."
    )


verbose_option = click.option("-v", "--verbose", count=True, help="Log progress to stderr (repeat for debug).")
seed_option = click.option("--seed", type=int, default=0, show_default=True, help="Random seed.")
config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="key=value lines naming AttackConfig fields; flags take precedence.",
)


def _flag(name):
    return "--" + name.replace("_", "-")


def attack_options(f):
    """One option per AttackConfig field, all defaulting to 'unset' so precedence can be resolved."""
    types = AttackConfig.field_types()
    for name in reversed(list(types)):
        if name == "saliency_method":
            opt = click.option(_flag(name), type=click.Choice(sorted(SALIENCY_METHODS)), default=None)
        else:
            opt = click.option(_flag(name), type=types[name], default=None, help=f"default {getattr(AttackConfig, name)}")
        f = opt(f)
    return f


def parse_config_file(path) -> dict:
    """Parse ``key=value`` lines (``#`` comments allowed) into typed AttackConfig overrides."""
    types = AttackConfig.field_types()
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise click.UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if key not in types:
            raise click.UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = types[key](value)
        except ValueError:
            raise click.UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


def resolve_config(config_path, flags) -> AttackConfig:
    """Flags over config file over built-in defaults."""
    base = AttackConfig()
    if config_path is not None:
        base = base.updated(**parse_config_file(config_path))
    try:
        return base.updated(**{k: v for k, v in flags.items() if k in AttackConfig.field_types()})
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


# ---------------------------------------------------------------- output helpers


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            row = [r.get(c) for c in RECORD_COLUMNS[: -len(METRICS)]] + [r["metrics"].get(m) for m in METRICS]
            writer.writerow([_fmt(v) for v in row])


def _echo_aggregate(name, agg):
    asr = agg["asr"]
    line = f"{name}: ASR {asr:.3f} ({agg['successes']}/{agg['total']})" if asr is not None else f"{name}: no images"
    metrics = " ".join(f"{k}={v:.4f}" for k, v in agg["metrics"].items() if v is not None)
    click.echo(line + (f"  {metrics}" if metrics else ""))


# ---------------------------------------------------------------- commands


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="ssta")
def cli():
    """Salient spatially transformed adversarial examples."""


@cli.command("gen-data")
@seed_option
@click.option("--count", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--size", type=click.IntRange(min=16), default=64, show_default=True)
@click.option("--classes", type=click.IntRange(4, len(CLASS_NAMES)), default=4, show_default=True)
@out_dir_option()
@verbose_option
def gen_data(seed, count, size, classes, out_dir, verbose):
    """Generate the synthetic shapes dataset as PNG files plus labels and split lists."""
    _setup_logging(verbose)
    ds = generate_dataset(seed, count, size, classes)
    files = save_dataset(ds, out_dir)
    config = {"seed": seed, "count": count, "size": size, "classes": classes}
    counts = np.bincount(ds.labels, minlength=classes).tolist()
    extra = {"outputs": files, "class_counts": counts, "split_sizes": {"train": ds.n_train, "test": len(ds) - ds.n_train}}
    write_manifest(build_manifest("gen-data", config, extra=extra), out_dir / "manifest.json")
    click.echo(f"wrote {count} images to {out_dir}")


@cli.command("train")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), required=True, help="Directory from gen-data.")
@seed_option
@click.option("--epochs", type=click.IntRange(min=1), default=TrainConfig.epochs, show_default=True)
@click.option("--lr", type=float, default=TrainConfig.learning_rate, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=TrainConfig.batch_size, show_default=True)
@click.option("--momentum", type=float, default=TrainConfig.momentum, show_default=True)
@out_dir_option()
@verbose_option
def train_cmd(data_dir, seed, epochs, lr, batch_size, momentum, out_dir, verbose):
    """Train the victim classifier and write SSTANET1 weights."""
    from .plotting import loss_curve

    _setup_logging(verbose)
    _, train_x, train_y = read_split(data_dir, "train")
    _, test_x, test_y = read_split(data_dir, "test")
    if len(train_x) == 0:
        raise click.UsageError(f"{data_dir}: training split is empty")
    num_classes = int(max(train_y.max(), test_y.max() if len(test_y) else 0)) + 1
    cfg = TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, momentum=momentum, seed=seed)
    net, report = train(train_x, train_y, cfg, num_classes=max(num_classes, 2), test=(test_x, test_y) if len(test_x) else None)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(net, out_dir / "model.bin")
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        writer.writerows([e + 1, repr(v)] for e, v in enumerate(report.epoch_losses))
    loss_curve(report.epoch_losses, out_dir / "loss.png")
    config = {k: list(v) if isinstance(v, tuple) else v for k, v in vars(cfg).items()}
    extra = {
        "train_accuracy": report.train_accuracy,
        "test_accuracy": report.test_accuracy,
        "architecture": net.describe(),
        "outputs": ["model.bin", "train_log.csv", "loss.png"],
    }
    write_manifest(build_manifest("train", config, extra=extra), out_dir / "manifest.json")
    click.echo(f"train accuracy {report.train_accuracy:.4f}, test accuracy {report.test_accuracy}")


def _write_attack_outputs(out_dir, stem, x, result, factor):
    save_image(result.x_adv, out_dir / f"{stem}adv.png")
    save_flow(result.flow, out_dir / f"{stem}flow.flo")
    save_image(amplify_diff(x, result.x_adv, factor), out_dir / f"{stem}diff.png")
    return {"adv": f"{stem}adv.png", "flow": f"{stem}flow.flo", "diff": f"{stem}diff.png"}


@cli.command("attack")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--label", type=int, default=None, help="True class; defaults to the model's prediction.")
@click.option("--mask", "mask_path", type=click.Path(path_type=Path), help="Import a fixed mask (byte >= 128 is inside).")
@click.option("--amplify", type=click.FloatRange(min=0, min_open=True), default=30.0, show_default=True)
@attack_options
@config_option
@out_dir_option()
@verbose_option
def attack_cmd(model_path, input_path, label, mask_path, amplify, config_path, out_dir, verbose, **flags):
    """Attack one image and write the adversarial image, flow field and amplified difference."""
    from .plotting import attack_panel

    _setup_logging(verbose)
    if mask_path is not None:
        flags["saliency_method"] = "imported"
    cfg = resolve_config(config_path, flags)
    net = load_weights(model_path)
    x = load_image(input_path)
    if x.shape != net.input_shape:
        raise click.UsageError(f"image shape {x.shape} does not match model input {net.input_shape}")
    pred = net.predict(x)
    y = pred if label is None else label
    if not 0 <= y < net.num_classes:
        raise click.UsageError(f"--label {y} outside 0..{net.num_classes - 1}")
    mask = load_mask(mask_path, x.shape[:2]) if mask_path is not None else None
    if cfg.saliency_method == "imported" and mask is None:
        raise click.UsageError("saliency_method 'imported' needs --mask")
    result = ssta_attack(net, x, y, cfg, mask=mask)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = _write_attack_outputs(out_dir, "", x, result, amplify)
    attack_panel(x, result.x_adv, result.mask.inside, out_dir / "panel.png", factor=amplify)
    outputs["panel"] = "panel.png"
    record = attack_record(0, str(input_path), y, pred, x, result, outputs)
    write_records_csv([record], out_dir / "records.csv")
    write_manifest(build_manifest("attack", cfg.to_dict(), [record]), out_dir / "manifest.json")
    status = "fooled" if result.success else "not fooled"
    click.echo(f"{status} after {result.iterations_used} iterations (tau {result.final_tau}, xi {result.final_xi:g})")


@cli.command("attack-batch")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--data", "data_dir", type=click.Path(path_type=Path), required=True, help="Directory from gen-data.")
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--limit", type=click.IntRange(min=1), default=None, help="Attack at most this many images.")
@click.option(
    "--all-images/--correct-only",
    default=False,
    show_default=True,
    help="Also attack images the model already misclassifies.",
)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--baseline", type=click.Choice(["none", "pgd"]), default="none", show_default=True)
@click.option("--pgd-eps", type=click.FloatRange(min=0), default=None, help="PGD budget in 8-bit levels; default picks the smallest of 1,2,4,8 reaching 95% success.")
@click.option("--pgd-steps", type=click.IntRange(min=0), default=PGD_STEPS, show_default=True)
@click.option("--figures", type=click.IntRange(min=0), default=4, show_default=True, help="Number of per-image panels to draw.")
@click.option("--amplify", type=click.FloatRange(min=0, min_open=True), default=30.0, show_default=True)
@attack_options
@config_option
@out_dir_option()
@verbose_option
def attack_batch_cmd(model_path, data_dir, split, limit, all_images, workers, baseline, pgd_eps, pgd_steps, figures, amplify, config_path, out_dir, verbose, **flags):  # fmt: skip
    """Attack a dataset split; writes per-image outputs, records.csv, figures and the aggregate manifest."""
    from .plotting import attack_panel, iteration_histogram, metric_bars

    _setup_logging(verbose)
    if flags.get("saliency_method") == "imported":
        raise click.UsageError("attack-batch computes saliency per image; 'imported' is not supported")
    cfg = resolve_config(config_path, flags)
    net = load_weights(model_path)
    names, images, labels = read_split(data_dir, split)
    if len(names) == 0:
        raise click.UsageError(f"{data_dir}: split {split!r} is empty")
    if images.shape[1:] != net.input_shape:
        raise click.UsageError(f"dataset images {images.shape[1:]} do not match model input {net.input_shape}")
    preds = net.predict_batch(images)
    keep = np.arange(len(names)) if all_images else np.flatnonzero(preds == labels)
    if limit is not None:
        keep = keep[:limit]
    if len(keep) == 0:
        raise click.UsageError("no images left to attack (all misclassified?)")
    log.info("attacking %d of %d images with %d worker(s)", len(keep), len(names), workers)

    results = run_batch(model_path, images[keep], labels[keep], cfg, workers=workers)
    for sub in ("adv", "flows", "diff", "figures"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for i, res in zip(keep, results):
        stem = Path(names[i]).stem
        save_image(res.x_adv, out_dir / "adv" / f"{stem}.png")
        save_flow(res.flow, out_dir / "flows" / f"{stem}.flo")
        save_image(amplify_diff(images[i], res.x_adv, amplify), out_dir / "diff" / f"{stem}.png")
        outputs = {"adv": f"adv/{stem}.png", "flow": f"flows/{stem}.flo", "diff": f"diff/{stem}.png"}
        records.append(attack_record(i, names[i], labels[i], preds[i], images[i], res, outputs))
    for rec, res in list(zip(records, results))[:figures]:
        i = rec["index"]
        attack_panel(images[i], res.x_adv, res.mask.inside, out_dir / "figures" / f"panel_{Path(names[i]).stem}.png",
                     factor=amplify, title=f"{names[i]}: {rec['label']} -> {rec['pred_after']}")  # fmt: skip

    extra = {"data": {"dir": str(data_dir), "split": split, "attacked": len(keep), "split_size": len(names)}}
    summary = {"ssta": aggregate(records)["metrics"]}
    if baseline == "pgd":
        def run(settings):
            return run_batch(model_path, images[keep], labels[keep], cfg, pgd=settings, workers=workers)

        if pgd_eps is None:
            settings, pgd_results, rates = pgd_ladder(run, PGD_LEVELS, steps=pgd_steps, target=TARGET_ASR)
        else:
            settings = PGDSettings(pgd_eps, pgd_steps)
            pgd_results = run(settings)
            rates = None
        pgd_records = [
            attack_record(i, names[i], labels[i], preds[i], images[i], res) for i, res in zip(keep, pgd_results)
        ]
        write_records_csv(pgd_records, out_dir / "records_pgd.csv")
        block = {
            "eps_levels": settings.eps,
            "steps": settings.steps,
            "step_size_levels": settings.eps / settings.step_divisor,
            "ladder_rates": None if rates is None else {str(k): v for k, v in rates.items()},
            "records": pgd_records,
            "aggregate": aggregate(pgd_records),
        }
        extra["baselines"] = {"pgd": block}
        summary[f"pgd {settings.eps:g}/255"] = block["aggregate"]["metrics"]

    doc = build_manifest("attack-batch", cfg.to_dict(), records, extra=extra)
    write_records_csv(records, out_dir / "records.csv")
    write_manifest(doc, out_dir / "manifest.json")
    fooled_iters = [r["iterations"] for r in records if r["success"]]
    iteration_histogram(fooled_iters, out_dir / "figures" / "iterations.png", max_iters=cfg.max_iters, stage_iters=cfg.stage_iters)
    metric_bars(summary, out_dir / "figures" / "metrics.png")
    _echo_aggregate("ssta", doc["aggregate"])
    if baseline == "pgd":
        _echo_aggregate(f"pgd eps={settings.eps:g}/255", extra["baselines"]["pgd"]["aggregate"])


def _parse_taus(text):
    try:
        taus = sorted({int(t) for t in text.split(",") if t.strip()}, reverse=True)
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}", param_hint="--tau") from None
    if not taus or any(not 0 <= t <= 255 for t in taus):
        raise click.BadParameter("thresholds must lie in 0..255", param_hint="--tau")
    return taus


@cli.command("saliency")
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--method", type=click.Choice(sorted(SALIENCY_METHODS)), default="ft", show_default=True)
@click.option("--tau", "tau_text", default="250,200,150,100,50", show_default=True, help="Comma-separated thresholds.")
@out_dir_option()
@verbose_option
def saliency_cmd(input_path, method, tau_text, out_dir, verbose):
    """Write the normalized saliency map and one mask image per threshold."""
    from .plotting import saliency_figure

    _setup_logging(verbose)
    taus = _parse_taus(tau_text)
    img = load_image(input_path)
    smap = SALIENCY_METHODS[method](img)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(smap, out_dir / "saliency.png")
    masks, areas, outputs = {}, {}, ["saliency.png"]
    for tau in taus:
        m = threshold_mask(smap, tau)
        masks[tau] = m.inside
        areas[str(tau)] = mask_area_fraction(m)
        save_image(m.inside.astype(np.float64), out_dir / f"mask_{tau:03d}.png")
        outputs.append(f"mask_{tau:03d}.png")
    saliency_figure(img, smap, masks, out_dir / "saliency_panel.png")
    outputs.append("saliency_panel.png")
    config = {"input": str(input_path), "method": method, "tau": taus}
    write_manifest(build_manifest("saliency", config, extra={"mask_area": areas, "outputs": outputs}), out_dir / "manifest.json")
    for tau in taus:
        click.echo(f"tau {tau:3d}: area {areas[str(tau)]:.4f}")


@cli.command("metrics")
@click.option("--ref", "ref_path", type=click.Path(path_type=Path), required=True)
@click.option("--test", "test_path", type=click.Path(path_type=Path), required=True)
@out_dir_option(required=False)
@verbose_option
def metrics_cmd(ref_path, test_path, out_dir, verbose):
    """Compare two images with every full-reference metric."""
    _setup_logging(verbose)
    ref, test = load_image(ref_path), load_image(test_path)
    if ref.shape != test.shape:
        raise click.UsageError(f"shape mismatch: {ref.shape} vs {test.shape}")
    report = metric_report(ref, test)
    for name in METRICS:
        value = getattr(report, name)
        if value is None:
            click.echo(f"{name:5s} n/a ({report.errors[name]})")
        else:
            click.echo(f"{name:5s} {value:.6f}" if math.isfinite(value) else f"{name:5s} inf")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        config = {"ref": str(ref_path), "test": str(test_path)}
        write_manifest(build_manifest("metrics", config, extra={"report": report.to_dict()}), out_dir / "manifest.json")
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerows([name, _fmt(report.to_dict()[name])] for name in METRICS)


# ---------------------------------------------------------------- entry point


def main(argv=None) -> int:
    """Run the CLI and map failures to exit codes instead of tracebacks."""
    try:
        code = cli.main(args=argv, prog_name="ssta", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (DecodeError, FormatError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    except NumericalError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return code if isinstance(code, int) else 0


def run():
    sys.exit(main())
