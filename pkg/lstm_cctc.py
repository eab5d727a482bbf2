#!/usr/bin/env python3
"""LSTM-CCTC Region Proposals - CLI Tool

Generates synthetic scenes, trains the four scan-direction LSTMs with the
count-based CTC loss, exports box proposals and evaluates them.

Usage:
    python lstm_cctc.py gen-data --spec spec.json --out data/
    python lstm_cctc.py train --data data/ --epochs 200 --out run/
    python lstm_cctc.py propose --checkpoint run/checkpoint.json --dataset data/test.jsonl --out run/
    python lstm_cctc.py eval --proposals run/proposals.jsonl --dataset data/test.jsonl --out run/
    python lstm_cctc.py ablate --checkpoint run/checkpoint.json --dataset data/test.jsonl --out run/
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from src.config import Settings, apply_overrides, load_config_file
from src.errors import DatasetError, IdMismatch, LstmCctcError, SpecValidationError, UsageError
from src.evaluation.report import evaluate
from src.features.synth import SceneSpec, generate_dataset, ground_truth_of, load_scenes
from src.network.checkpoint import load_checkpoint
from src.orchestrator import ORDER_PRESETS, ProposalOrchestrator, parse_orders
from src.proposals.boxes import Box
from src.proposals.generator import ProposalConfig
from src.training.trainer import TrainConfig, train_loop
from src.utils.jsonl import iter_jsonl, write_jsonl
from src.utils.manifest import RunManifest, sha256_file

logger = logging.getLogger("lstm_cctc")

# argparse destinations a --config file may not override
_NOT_OVERRIDABLE = {"command", "func", "config", "help"}


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def print_separator(char="=", length=80):
    """Print a separator line."""
    print(char * length)


def print_section(title):
    """Print a section title."""
    print(f"\n{'=' * 80}")
    print(f"  {title}")
    print(f"{'=' * 80}\n")


def configure_logging(settings: Settings, verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def resolve_seed(args, settings: Settings) -> int:
    return settings.seed if args.seed is None else int(args.seed)


def load_spec(path: Optional[str]) -> SceneSpec:
    if not path:
        return SceneSpec()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise SpecValidationError(f"spec file not found: {path}", field="spec")
    except json.JSONDecodeError as e:
        raise SpecValidationError(f"spec file is not valid JSON: {e}", field="spec")
    if not isinstance(data, dict):
        raise SpecValidationError("spec file must hold a JSON object", field="spec")
    return SceneSpec.from_json(data)


def train_file(path: str) -> Path:
    """A dataset directory resolves to its train split."""
    path = Path(path)
    return path / "train.jsonl" if path.is_dir() else path


def cmd_gen_data(args, settings: Settings) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = SceneSpec.from_json({**spec.to_json(), "seed": int(args.seed)})
    out_dir = Path(args.out)

    print_section("SYNTHETIC DATASET")
    print(f"📐 Grid: {spec.n}x{spec.n}x{spec.k}   objects: {spec.object_count_range}   seed: {spec.seed}")

    canonical = json.dumps(spec.to_json(), sort_keys=True, separators=(",", ":"))
    manifest = RunManifest(command="gen-data", config=spec.to_json(), seed=spec.seed,
                           inputs=[args.spec] if args.spec else [])
    manifest.extra["specSha256"] = hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "spec.json", "w", encoding="utf-8") as f:
        f.write(canonical + "\n")
    manifest.outputs.append(str(out_dir / "spec.json"))
    for split, size in (("train", args.train_size), ("test", args.test_size)):
        path = generate_dataset(spec, size, split, out_dir)
        manifest.outputs.append(str(path))
        print(f"💾 {split}: {size} scenes -> {path}")

    manifest.finish(out_dir / "manifest.json")
    print("\n✅ Dataset generated")
    return 0


def build_train_config(args, settings: Settings) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(args.learning_rate),
        lr_drop_epoch=int(args.lr_drop_epoch),
        dropped_rate=float(args.dropped_rate),
        momentum=float(args.momentum),
        weight_decay=float(args.weight_decay),
        batch_size=int(args.batch_size),
        epochs=int(args.epochs),
        pretrain_epochs=int(args.pretrain_epochs),
        seed=resolve_seed(args, settings),
        hidden_size=settings.hidden_size if args.hidden_size is None else int(args.hidden_size),
        init_std=float(args.init_std),
        clip_norm=None if args.clip_norm is None else float(args.clip_norm),
        checkpoint_every=int(args.checkpoint_every),
        scan_orders=parse_orders(args.scan_orders),
    )


def cmd_train(args, settings: Settings) -> int:
    cfg = build_train_config(args, settings)
    data_path = train_file(args.data)
    scenes = load_scenes(data_path)
    out_dir = Path(args.out)
    checkpoint_path = out_dir / "checkpoint.json"

    print_section("TRAINING")
    print(f"📚 Scenes: {len(scenes)} from {data_path}")
    print(f"🔁 Epochs: {cfg.epochs}   lr: {cfg.learning_rate} -> {cfg.dropped_rate} at epoch {cfg.lr_drop_epoch}")
    print(f"🧭 Scan orders: {', '.join(o.value for o in cfg.scan_orders)}")

    manifest = RunManifest(command="train", config=cfg.to_json(), seed=cfg.seed, inputs=[str(data_path)])
    manifest.extra["inputSha256"] = sha256_file(data_path)

    exported = {"done": False}

    def export_proposals(epoch: int, model) -> None:
        if not args.proposals_out or exported["done"] or epoch < cfg.pretrain_epochs:
            return
        orchestrator = ProposalOrchestrator(model, ProposalConfig(grid_scale=settings.grid_scale), known_count=True)
        records = (orchestrator.proposal_record(orchestrator.propose(scene)) for scene in scenes)
        written = write_jsonl(Path(args.proposals_out), records)
        manifest.outputs.append(str(args.proposals_out))
        exported["done"] = True
        logger.info("exported proposals for %d training scenes after epoch %d", written, epoch)

    ckpt, log = train_loop(scenes, cfg, checkpoint_path=checkpoint_path, resume=args.resume,
                           epoch_callback=export_proposals)
    if args.proposals_out and not exported["done"]:
        logger.warning("training stopped before %d pretraining epochs; no proposals exported", cfg.pretrain_epochs)

    log_path = log.write_csv(out_dir / "train_log.csv", ckpt.model.orders)
    manifest.outputs.extend([str(checkpoint_path), str(log_path)])
    manifest.extra["epochsCompleted"] = ckpt.epoch
    manifest.finish(out_dir / "manifest.json")

    if log.records:
        print(f"📉 Loss: {log.records[0].loss:.4f} (epoch {log.records[0].epoch}) -> {log.records[-1].loss:.4f} (epoch {ckpt.epoch})")
    print(f"💾 Checkpoint saved to: {checkpoint_path}")
    print("\n✅ Training complete")
    return 0


def cmd_propose(args, settings: Settings) -> int:
    scenes = load_scenes(Path(args.dataset))
    out_dir = Path(args.out)
    proposals_path = out_dir / "proposals.jsonl"
    manifest = RunManifest(command="propose", config=_snapshot(args), seed=resolve_seed(args, settings),
                           inputs=[args.checkpoint, args.dataset])

    print_section("PROPOSALS")
    if not scenes:
        write_jsonl(proposals_path, [])
        manifest.outputs.append(str(proposals_path))
        manifest.finish(out_dir / "manifest.json")
        print("⚠️  Dataset is empty; wrote an empty proposals file")
        return 0

    ckpt = load_checkpoint(Path(args.checkpoint), expected_input_size=scenes[0].grid.k)
    scale = settings.grid_scale if args.grid_scale is None else float(args.grid_scale)
    orchestrator = ProposalOrchestrator(ckpt.model, ProposalConfig(grid_scale=scale), known_count=args.known_count)
    overlap = float(args.overlap) if args.pseudo_gt else None

    records = []
    alignments = []
    failures = 0
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        results = orchestrator.propose(scene)
        for error in results["errors"]:
            print(f"error: {scene.scene_id}: {error}", file=sys.stderr)
        failures += bool(results["errors"])
        records.append(orchestrator.proposal_record(results, overlap))
        alignments.append({"image": scene.scene_id, "alignments": list(results["alignments"].values())})

    write_jsonl(proposals_path, records)
    manifest.outputs.append(str(proposals_path))
    if args.alignments:
        write_jsonl(Path(args.alignments), alignments)
        manifest.outputs.append(str(args.alignments))
    manifest.finish(out_dir / "manifest.json")

    total = sum(len(r["boxes"]) for r in records)
    print(f"🖼️  Images: {len(records)}   proposals: {total} ({total / len(records):.1f} per image)")
    print(f"💾 Proposals saved to: {proposals_path}")
    if failures:
        print(f"\n❌ {failures} image(s) had decoding errors")
        return 2
    print("\n✅ Proposals exported")
    return 0


def read_proposals(path: Path, labels: Dict[str, int]) -> Dict[str, List[Box]]:
    """Proposal records keyed by image id, mapped back to grid cells."""
    proposals: Dict[str, List[Box]] = {}
    for record in iter_jsonl(path):
        try:
            image_id = str(record["image"])
            scale = float(record.get("scale", 1.0))
            label = labels.get(image_id, 0)
            proposals[image_id] = [Box.from_scaled(values, scale, label) for values in record["boxes"]]
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"malformed proposal record in {path}: {e}")
    return proposals


def check_ids(proposals: Dict[str, List[Box]], ground_truth: Dict[str, List[Box]]) -> None:
    missing = set(ground_truth) - set(proposals)
    if missing:
        raise IdMismatch(missing, "the proposals file")
    extra = set(proposals) - set(ground_truth)
    if extra:
        raise IdMismatch(extra, "the dataset file")


def cmd_eval(args, settings: Settings) -> int:
    scenes = load_scenes(Path(args.dataset))
    ground_truth = ground_truth_of(scenes)
    proposals = read_proposals(Path(args.proposals), {s.scene_id: s.class_id for s in scenes})
    check_ids(proposals, ground_truth)

    report = evaluate(proposals, ground_truth, use_07_metric=args.use07)
    out_dir = Path(args.out)
    report_path = out_dir / "report.json"
    curve_path = out_dir / "recall_curve.csv"
    report.write(report_path, curve_path)
    manifest = RunManifest(command="eval", config=_snapshot(args), seed=resolve_seed(args, settings),
                           inputs=[args.proposals, args.dataset], outputs=[str(report_path), str(curve_path)])
    manifest.finish(out_dir / "manifest.json")

    print_section("EVALUATION")
    for tau, recall in sorted(report.recall_at_iou.items()):
        print(f"  recall@{tau:g}: {recall:.4f}")
    print(f"  CorLoc: {report.corloc:.4f}")
    print(f"  mAP ({report.ap_metric}): {report.mAP:.4f}")
    print(f"  proposals per image: {report.mean_proposals_per_image:.1f}")
    print_separator("-")
    print(f"💾 Report saved to: {report_path}")
    return 0


def cmd_ablate(args, settings: Settings) -> int:
    scenes = load_scenes(Path(args.dataset))
    if not scenes:
        raise DatasetError(f"no scenes in {args.dataset}")
    ckpt = load_checkpoint(Path(args.checkpoint), expected_input_size=scenes[0].grid.k)
    scale = settings.grid_scale if args.grid_scale is None else float(args.grid_scale)
    config = ProposalConfig(grid_scale=scale)

    print_section("SCAN-ORDER ABLATION")
    rows = []
    for preset in args.presets.split(","):
        orders = ORDER_PRESETS.get(preset.strip())
        if orders is None:
            raise SpecValidationError(f"unknown preset {preset!r} (expected {', '.join(ORDER_PRESETS)})",
                                      field="presets")
        if not set(orders) <= set(ckpt.model.orders):
            logger.warning("checkpoint lacks orders for preset %s; skipped", preset)
            continue
        summary = ProposalOrchestrator(ckpt.model.restricted(orders), config).summarize(scenes)
        rows.append({"preset": preset.strip(), **summary.to_json()})
        print(f"  {preset.strip():>5}: point-in-box {summary.point_in_box_rate:.4f} "
              f"(chance {summary.gt_area_density:.4f})   count accuracy {summary.count_accuracy:.4f}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "ablation.json"
    csv_path = out_dir / "ablation.csv"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
    columns = ["preset", "pointInBoxRate", "gtAreaDensity", "countAccuracy", "meanPointsPerImage",
               "meanProposalsPerImage"]
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])

    manifest = RunManifest(command="ablate", config=_snapshot(args), seed=resolve_seed(args, settings),
                           inputs=[args.checkpoint, args.dataset], outputs=[str(json_path), str(csv_path)])
    manifest.finish(out_dir / "manifest.json")
    print(f"\n💾 Ablation table saved to: {json_path}")
    return 0


def _snapshot(args) -> dict:
    return {key: value for key, value in vars(args).items() if key not in ("func",)}


def build_parser() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Random seed (default: LSTM_CCTC_SEED or 42)")
    common.add_argument("--config", help="JSON file whose keys override command-line flags")
    common.add_argument("--out", default=".", help="Output directory (default: current directory)")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    parser = CliParser(
        description="Count-supervised region proposals with LSTM-CCTC",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Reference desk-scale dataset
  python lstm_cctc.py gen-data --out data/ --train-size 500 --test-size 100

  # Train with the default schedule
  python lstm_cctc.py train --data data/ --epochs 200 --out run/

  # Export proposals and evaluate them
  python lstm_cctc.py propose --checkpoint run/checkpoint.json --dataset data/test.jsonl --out run/
  python lstm_cctc.py eval --proposals run/proposals.jsonl --dataset data/test.jsonl --out run/
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="Generate train/test synthetic scenes")
    gen.add_argument("--spec", help="Scene spec JSON (default: the reference spec)")
    gen.add_argument("--train-size", type=int, default=500)
    gen.add_argument("--test-size", type=int, default=100)
    gen.set_defaults(func=cmd_gen_data)

    defaults = TrainConfig()
    train = sub.add_parser("train", parents=[common], help="Train the scan-direction LSTMs")
    train.add_argument("--data", required=True, help="Dataset directory or train JSON-lines file")
    train.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    train.add_argument("--lr-drop-epoch", type=int, default=defaults.lr_drop_epoch)
    train.add_argument("--dropped-rate", type=float, default=defaults.dropped_rate)
    train.add_argument("--momentum", type=float, default=defaults.momentum)
    train.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    train.add_argument("--epochs", type=int, default=defaults.epochs)
    train.add_argument("--pretrain-epochs", type=int, default=defaults.pretrain_epochs)
    train.add_argument("--hidden-size", type=int, default=None, help="(default: LSTM_CCTC_HIDDEN_SIZE or 256)")
    train.add_argument("--init-std", type=float, default=defaults.init_std,
                       help="Std of the Gaussian initial weights (default: 0.01)")
    train.add_argument("--clip-norm", type=float, default=None, help="Global gradient norm clip (default: off)")
    train.add_argument("--checkpoint-every", type=int, default=defaults.checkpoint_every)
    train.add_argument("--scan-orders", default="four", help="Preset (one, two, four) or comma-separated orders")
    train.add_argument("--resume", action="store_true", help="Continue from <out>/checkpoint.json")
    train.add_argument("--proposals-out", help="Export training-set proposals after the pretraining epochs")
    train.set_defaults(func=cmd_train)

    propose = sub.add_parser("propose", parents=[common], help="Decode scenes into box proposals")
    propose.add_argument("--checkpoint", required=True)
    propose.add_argument("--dataset", required=True)
    propose.add_argument("--known-count", action="store_true", help="Decode with the ground-truth count")
    propose.add_argument("--pseudo-gt", action="store_true", help="Add the pseudo ground truth per image")
    propose.add_argument("--overlap", type=float, default=0.5, help="IoU for pseudo-GT positives (default: 0.5)")
    propose.add_argument("--grid-scale", type=float, default=None, help="(default: LSTM_CCTC_GRID_SCALE or 1.0)")
    propose.add_argument("--alignments", help="Also write decoded alignments to this JSON-lines file")
    propose.set_defaults(func=cmd_propose)

    ev = sub.add_parser("eval", parents=[common], help="Recall, CorLoc and AP of exported proposals")
    ev.add_argument("--proposals", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--use07", action="store_true", help="11-point VOC07 AP instead of all-point")
    ev.set_defaults(func=cmd_eval)

    ablate = sub.add_parser("ablate", parents=[common], help="Compare scan-order subsets of one checkpoint")
    ablate.add_argument("--checkpoint", required=True)
    ablate.add_argument("--dataset", required=True)
    ablate.add_argument("--presets", default="one,two,four")
    ablate.add_argument("--grid-scale", type=float, default=None)
    ablate.set_defaults(func=cmd_ablate)

    return parser


def override_kinds(parser: argparse.ArgumentParser, command: str) -> Dict[str, Optional[type]]:
    """Converter per overridable destination of one subcommand, taken from its flags."""
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    kinds: Dict[str, Optional[type]] = {}
    for action in subparsers.choices[command]._actions:
        if action.dest in _NOT_OVERRIDABLE:
            continue
        kinds[action.dest] = bool if isinstance(action, argparse._StoreTrueAction) else action.type
    return kinds


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI function. Returns 0 on success, 1 on validation errors, 2 on runtime errors."""
    load_dotenv()
    parser = build_parser()

    try:
        args = parser.parse_args(argv)
        settings = Settings.from_env()
        configure_logging(settings, args.verbose)
        if args.config:
            apply_overrides(args, load_config_file(Path(args.config)), override_kinds(parser, args.command))
        return args.func(args, settings)
    except LstmCctcError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
