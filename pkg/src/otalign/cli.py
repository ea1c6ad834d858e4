"""Command-line pipeline: generate corpora, train both stages, extract
alignments, predict match labels, evaluate, and sweep supervision ratios.

Every command is deterministic given its flags, seed, and input files.
Delimited outputs carry `# `-prefixed provenance headers (command, config
hash, seed); JSON outputs carry the same fields under `_provenance`; JSONL
data files stay header-free so each line is a plain record, and get a
`.meta.json` sidecar instead.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np

from .checkpoint import load_extractor, load_matcher, save_checkpoint
from .core import INPUT_MODES, CasePairRecord, TrainConfig
from .data import (
    SyntheticConfig,
    generate_synthetic_corpus,
    load_jsonl,
    mask_alignments,
    save_jsonl,
)
from .extract import ExtractorOutput, compute_extractor_output, export_alignment_heatmap
from .inverse_ot import train_extractor
from .ioutil import write_text_atomic
from .matching import build_match_example, parse_input_mode, predict_match, train_matcher
from .metrics import compute_metrics, extraction_pair_metrics, label_accuracy
from .report import SWEEP_RATIOS, render_heatmap, render_label_sweep, render_loss_curves


class _State:
    command: Optional[str] = None


def _config_hash(params: dict) -> str:
    """Stable short hash of the semantic parameters (never file paths, so
    identical runs in different directories produce identical outputs)."""
    canonical = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _provenance(params: dict, seed: Optional[int]) -> dict:
    return {
        "command": _State.command,
        "config_hash": _config_hash(params),
        "seed": seed,
    }


def _header_lines(provenance: dict) -> list[str]:
    return [
        f"otalign {provenance['command']}",
        f"config_hash: {provenance['config_hash']}",
        f"seed: {provenance['seed']}",
    ]


def _write_csv(path: Path, provenance: dict, fieldnames: Sequence[str], rows) -> None:
    buffer = io.StringIO()
    for line in _header_lines(provenance):
        buffer.write(f"# {line}\n")
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _format_cell(row[k]) for k in fieldnames})
    write_text_atomic(path, buffer.getvalue())


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _write_json(path: Path, document: dict) -> None:
    write_text_atomic(path, json.dumps(document, sort_keys=True, indent=2) + "\n")


def _load_corpus(path: str) -> list[CasePairRecord]:
    records = load_jsonl(path)
    dims = {record.x.dim for record in records} | {record.y.dim for record in records}
    if len(dims) > 1:
        raise ValueError(f"corpus mixes embedding dimensions {sorted(dims)}")
    return records


def _stage1_config(records: Sequence[CasePairRecord], **flags) -> TrainConfig:
    renamed = {"lr": "eta1", "batch": "n1"}
    overrides = {
        renamed.get(key, key): value for key, value in flags.items() if value is not None
    }
    return TrainConfig(d=records[0].x.dim, **overrides)


def _stage3_config(base: TrainConfig, **flags) -> TrainConfig:
    renamed = {"lr": "eta3", "batch": "n3"}
    payload = base.to_dict()
    payload.update(
        {renamed.get(key, key): value for key, value in flags.items() if value is not None}
    )
    return TrainConfig.from_dict(payload)


def _stage2_outputs(extractor, records, config) -> list[ExtractorOutput]:
    return [compute_extractor_output(extractor, record, config) for record in records]


def _extraction_scores(outputs, records) -> tuple[float, float]:
    """Rationale-label accuracy and pro-pair F1 against the gold annotations."""
    predicted_labels, gold_labels = [], []
    predicted_pairs, gold_pairs = [], []
    for output, record in zip(outputs, records):
        if record.alignments is None or record.x.rationale_labels is None:
            raise ValueError(f"pair {record.pair_id} has no gold annotations to score")
        predicted_labels.extend([output.r_hat_x, output.r_hat_y])
        gold_labels.extend([record.x.rationale_labels, record.y.rationale_labels])
        predicted_pairs.append({(p.m, p.n) for p in output.extraction.pro_pairs})
        gold_pairs.append({(int(m), int(n)) for m, n in np.argwhere(record.alignments.positive_mask())})
    accuracy = label_accuracy(predicted_labels, gold_labels)
    f1 = extraction_pair_metrics(predicted_pairs, gold_pairs)["pair_f1"]
    return accuracy, f1


def _pro_pair_json(pair) -> dict:
    return {
        "x": pair.m,
        "y": pair.n,
        "mass": pair.plan_mass,
        "type_x": pair.type_x,
        "type_y": pair.type_y,
    }


def _con_json(con) -> dict:
    return {"index": con.index, "type": con.rationale_type}


@click.group(name="otalign")
@click.pass_context
def cli(ctx: click.Context) -> None:
    """Sentence alignment and case matching over precomputed embeddings."""
    _State.command = ctx.invoked_subcommand


@cli.command()
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output JSONL path.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pairs", type=int, default=200, show_default=True)
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--noise-scale", type=float, default=0.3, show_default=True)
@click.option("--alignment-noise", type=float, default=0.0, show_default=True)
def generate(out, seed, pairs, dim, noise_scale, alignment_noise):
    """Write a synthetic labeled corpus of case pairs."""
    config = SyntheticConfig(
        pairs=pairs,
        d=dim,
        noise_scale=noise_scale,
        alignment_noise=alignment_noise,
        seed=seed,
    )
    records = generate_synthetic_corpus(config)
    save_jsonl(records, out)
    meta = {
        "_provenance": _provenance(config.to_dict(), seed),
        "generator_config": config.to_dict(),
        "records": len(records),
    }
    _write_json(_meta_path(out), meta)
    click.echo(f"wrote {len(records)} pairs to {out}")


def _meta_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".meta.json")


@cli.command(name="train-extract")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--gamma", type=float, default=None, help="Entropic regularization weight.")
@click.option("--gamma1", type=float, default=None, help="Alignment loss weight.")
@click.option("--gamma2", type=float, default=None, help="Unsupervised alignment term weight.")
@click.option("--epsilon", type=float, default=None, help="Rationale affinity weight (<= 0).")
@click.option("--tau", type=float, default=None, help="Pro-pair plan threshold.")
@click.option("--label-ratio", type=float, default=None, help="Fraction of alignment labels kept for training.")
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None)
def train_extract(data, out, seed, gamma, gamma1, gamma2, epsilon, tau, label_ratio, epochs, lr, batch):
    """Train the rationale extractor and alignment cost (stage 1)."""
    records = _load_corpus(data)
    config = _stage1_config(
        records, seed=seed, gamma=gamma, gamma1=gamma1, gamma2=gamma2,
        epsilon=epsilon, tau=tau, epochs=epochs, lr=lr, batch=batch,
    )
    training_records = records
    if label_ratio is not None:
        training_records = mask_alignments(records, label_ratio, config.seed)
    extractor, trace = train_extractor(training_records, config)

    out = Path(out)
    provenance = _provenance(
        {"config": config.to_dict(), "label_ratio": label_ratio}, config.seed
    )
    save_checkpoint(extractor, config, "extractor", out / "extractor.json")
    rows = [
        {
            "epoch": i + 1,
            "l_rationale": losses.l_rationale,
            "l_alignment": losses.l_alignment,
            "total": losses.total,
        }
        for i, losses in enumerate(trace)
    ]
    _write_csv(out / "extract_loss.csv", provenance, ["epoch", "l_rationale", "l_alignment", "total"], rows)
    render_loss_curves(rows, ["l_rationale", "l_alignment", "total"], out / "extract_loss.png", "stage-1 training loss")
    click.echo(f"trained extractor on {len(records)} pairs; final loss {trace[-1].total:.6f}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output JSON path.")
@click.option("--tau", type=float, default=None, help="Override the checkpoint's plan threshold.")
def extract(data, checkpoint, out, tau):
    """Extract pro pairs and con rationales for every pair (stage 2)."""
    records = _load_corpus(data)
    extractor, config = load_extractor(checkpoint)
    if tau is not None:
        config = dataclasses.replace(config, tau=tau)
    outputs = _stage2_outputs(extractor, records, config)
    pairs = [
        {
            "pair_id": output.pair_id,
            "pro_pairs": [_pro_pair_json(p) for p in output.extraction.pro_pairs],
            "con_x": [_con_json(c) for c in output.extraction.con_x],
            "con_y": [_con_json(c) for c in output.extraction.con_y],
            "labels_x": [int(v) for v in output.r_hat_x],
            "labels_y": [int(v) for v in output.r_hat_y],
        }
        for output in outputs
    ]
    document = {
        "_provenance": _provenance({"config": config.to_dict()}, config.seed),
        "tau": config.tau,
        "pairs": pairs,
    }
    _write_json(Path(out), document)
    total = sum(len(p["pro_pairs"]) for p in pairs)
    click.echo(f"extracted {total} pro pairs across {len(pairs)} case pairs")


@cli.command(name="train-match")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False), help="Trained extractor checkpoint.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--gamma3", type=float, default=None, help="Auxiliary (fidelity + contrastive) loss weight.")
@click.option("--input-mode", type=click.Choice(INPUT_MODES), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None)
def train_match(data, checkpoint, out, seed, gamma3, input_mode, epochs, lr, batch):
    """Train the match-label predictor on extractor outputs (stage 3)."""
    records = _load_corpus(data)
    extractor, extractor_config = load_extractor(checkpoint)
    config = _stage3_config(
        extractor_config, seed=seed, gamma3=gamma3, input_mode=input_mode,
        epochs=epochs, lr=lr, batch=batch,
    )
    outputs = _stage2_outputs(extractor, records, extractor_config)
    predictor, trace = train_matcher(records, outputs, config)

    out = Path(out)
    provenance = _provenance({"config": config.to_dict()}, config.seed)
    save_checkpoint(predictor, config, "matcher", out / "matcher.json")
    rows = [
        {
            "epoch": i + 1,
            "l_match": losses.l_match,
            "l_explanation": losses.l_explanation,
            "l_contrastive": losses.l_contrastive,
            "total": losses.l_match + config.gamma3 * (losses.l_explanation + losses.l_contrastive),
        }
        for i, losses in enumerate(trace)
    ]
    _write_csv(
        out / "match_loss.csv", provenance,
        ["epoch", "l_match", "l_explanation", "l_contrastive", "total"], rows,
    )
    render_loss_curves(
        rows, ["l_match", "l_explanation", "l_contrastive", "total"],
        out / "match_loss.png", "stage-3 training loss",
    )
    click.echo(f"trained matcher on {len(records)} pairs; final loss {rows[-1]['total']:.6f}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--extractor", "extractor_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--matcher", "matcher_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output JSONL path.")
def predict(data, extractor_path, matcher_path, out):
    """Predict a match label and explanation for every pair."""
    records = _load_corpus(data)
    extractor, extractor_config = load_extractor(extractor_path)
    predictor, matcher_config = load_matcher(matcher_path)
    if extractor_config.d != matcher_config.d:
        raise ValueError(
            f"extractor dimension {extractor_config.d} does not match "
            f"matcher dimension {matcher_config.d}"
        )
    mode = parse_input_mode(matcher_config.input_mode)
    lines = []
    for record in records:
        output = compute_extractor_output(extractor, record, extractor_config)
        example = build_match_example(record, output, mode)
        prediction = predict_match(predictor, example.s_rx, example.s_ry, example.candidates)
        lines.append(
            {
                "pair_id": record.pair_id,
                "label": prediction.label,
                "distribution": [float(p) for p in prediction.distribution],
                "chosen_explanation_text": example.candidate_texts[prediction.chosen_index],
                "pro_pairs": [_pro_pair_json(p) for p in output.extraction.pro_pairs],
                "con_x": [_con_json(c) for c in output.extraction.con_x],
                "con_y": [_con_json(c) for c in output.extraction.con_y],
            }
        )
    payload = "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)
    write_text_atomic(out, payload)
    params = {"extractor": extractor_config.to_dict(), "matcher": matcher_config.to_dict()}
    _write_json(
        _meta_path(out),
        {"_provenance": _provenance(params, matcher_config.seed), "records": len(lines)},
    )
    click.echo(f"predicted {len(lines)} pairs to {out}")


@cli.command(name="eval")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Gold corpus JSONL.")
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Metrics JSON path.")
def eval_command(data, predictions, out):
    """Score predictions against gold labels and alignments."""
    records = {record.pair_id: record for record in _load_corpus(data)}
    predicted = []
    with open(predictions, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except ValueError as exc:
                raise ValueError(f"predictions line {number}: invalid JSON ({exc})")
            for key in ("pair_id", "label", "pro_pairs"):
                if key not in entry:
                    raise ValueError(f"predictions line {number}: missing field '{key}'")
            predicted.append(entry)
    if not predicted:
        raise ValueError("predictions file is empty")

    labels_pred, labels_gold = [], []
    pairs_pred, pairs_gold = [], []
    for entry in predicted:
        record = records.get(entry["pair_id"])
        if record is None:
            raise ValueError(f"prediction for unknown pair {entry['pair_id']}")
        if record.match_label is None or record.alignments is None:
            raise ValueError(f"pair {record.pair_id} has no gold labels to score against")
        labels_pred.append(int(entry["label"]))
        labels_gold.append(record.match_label)
        pairs_pred.append({(int(p["x"]), int(p["y"])) for p in entry["pro_pairs"]})
        pairs_gold.append(
            {(int(m), int(n)) for m, n in np.argwhere(record.alignments.positive_mask())}
        )
    report = compute_metrics(labels_pred, labels_gold)
    document = {
        "_provenance": _provenance({"pairs": len(predicted)}, None),
        "match": report.to_dict(),
        "extraction": extraction_pair_metrics(pairs_pred, pairs_gold),
        "pairs_evaluated": len(predicted),
    }
    _write_json(Path(out), document)
    click.echo(
        f"accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f} "
        f"over {len(predicted)} pairs"
    )


@cli.command(name="sweep-labels")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seeds", default="0", show_default=True, help="Comma-separated training seeds.")
@click.option("--gamma", type=float, default=None)
@click.option("--gamma1", type=float, default=None)
@click.option("--gamma2", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None)
def sweep_labels(data, out, seeds, gamma, gamma1, gamma2, epsilon, tau, epochs, lr, batch):
    """Retrain stage 1 at alignment-label ratios {0, 0.1, 0.2, 0.5, 1} per seed."""
    records = _load_corpus(data)
    try:
        seed_list = [int(part) for part in seeds.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"--seeds must be comma-separated integers, got {seeds!r}")
    if not seed_list:
        raise ValueError("--seeds is empty")

    rows = []
    for ratio in SWEEP_RATIOS:
        for seed in seed_list:
            config = _stage1_config(
                records, seed=seed, gamma=gamma, gamma1=gamma1, gamma2=gamma2,
                epsilon=epsilon, tau=tau, epochs=epochs, lr=lr, batch=batch,
            )
            masked = mask_alignments(records, ratio, seed)
            extractor, _ = train_extractor(masked, config)
            outputs = _stage2_outputs(extractor, records, config)
            accuracy, f1 = _extraction_scores(outputs, records)
            rows.append(
                {"ratio": ratio, "seed": seed, "extraction_accuracy": accuracy, "f1": f1}
            )
            click.echo(f"ratio {ratio:g} seed {seed}: accuracy {accuracy:.4f}, F1 {f1:.4f}")

    out = Path(out)
    base_config = _stage1_config(
        records, gamma=gamma, gamma1=gamma1, gamma2=gamma2,
        epsilon=epsilon, tau=tau, epochs=epochs, lr=lr, batch=batch,
    )
    provenance = _provenance(
        {"config": base_config.to_dict(), "seeds": seed_list, "ratios": list(SWEEP_RATIOS)},
        None,
    )
    _write_csv(out / "sweep.csv", provenance, ["ratio", "seed", "extraction_accuracy", "f1"], rows)
    render_label_sweep(rows, out / "sweep.png")
    click.echo(f"swept {len(rows)} cells to {out / 'sweep.csv'}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--pair", default=None, help="Pair id to render (default: first in the corpus).")
@click.option("--tau", type=float, default=None, help="Override the checkpoint's plan threshold.")
def heatmap(data, checkpoint, out, pair, tau):
    """Export one pair's transport plan as CSV grids plus a rendered figure."""
    records = _load_corpus(data)
    extractor, config = load_extractor(checkpoint)
    if tau is not None:
        config = dataclasses.replace(config, tau=tau)
    if pair is None:
        record = records[0]
    else:
        matching = [r for r in records if r.pair_id == pair]
        if not matching:
            raise ValueError(f"pair {pair} not found in {data}")
        record = matching[0]
    output = compute_extractor_output(extractor, record, config)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance(
        {"config": config.to_dict(), "pair": record.pair_id}, config.seed
    )
    csv_path, companion = export_alignment_heatmap(
        output.plan,
        output.r_hat_x,
        output.r_hat_y,
        config.tau,
        out / f"{record.pair_id}_plan.csv",
        header_lines=_header_lines(provenance) + [f"pair: {record.pair_id}", f"tau: {config.tau:g}"],
    )
    png_path = render_heatmap(
        output.plan.plan, output.r_hat_x, output.r_hat_y, config.tau,
        out / f"{record.pair_id}_plan.png", record.pair_id,
    )
    click.echo(f"wrote {csv_path}, {companion}, {png_path}")


def _fail(message: str, code: int, pair_id: Optional[str] = None) -> int:
    payload = {"error": " ".join(str(message).split()), "command": _State.command}
    if pair_id is not None:
        payload["pair"] = pair_id
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point returning an exit code; errors become one JSON line on stderr."""
    _State.command = None
    try:
        cli.main(args=argv, prog_name="otalign", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        return _fail(exc.format_message(), 2)
    except click.Abort:
        return _fail("aborted", 130)
    except Exception as exc:  # noqa: BLE001  - the error contract is a single stderr line
        return _fail(str(exc) or repr(exc), 1, pair_id=getattr(exc, "pair_id", None))
    return 0


if __name__ == "__main__":
    sys.exit(main())
