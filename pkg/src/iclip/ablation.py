"""The ablation matrix: which interaction units matter, in what order, with and without prompting.

Two tables are produced. The unit table grows the enabled set
{P}, {P,C}, {P,C,O}, {P,C,O,M} (blocks always run in P->O->C->M order). The
order table runs every permutation of P, O, C with M pinned last. Each row
is trained with and without interaction-aware prompting (IAP). Identical
configurations shared by both tables are trained once.

Every configuration writes into its own directory under ``rows/``; an
existing ``result.json`` there is reused, so deleting one row's directory
and re-running reproduces just that row.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import checkpoint as ckpt_io
from .config import RunConfig
from .evaluation import write_detections, write_report
from .interaction import SHORT_NAMES
from .pipeline import Fixtures, evaluate_model, train_model
from .training import SplitSpec, write_loss_trace

log = logging.getLogger(__name__)

UNIT_ORDERS = (
    ("person",),
    ("person", "context"),
    ("person", "object", "context"),
    ("person", "object", "context", "memory"),
)
ORDER_ROWS = tuple(perm + ("memory",) for perm in itertools.permutations(("person", "object", "context")))


@dataclass(frozen=True)
class AblationRow:
    table: str  # "units" or "orders"
    order: tuple[str, ...]
    prompting: bool

    @property
    def label(self) -> str:
        return "->".join(SHORT_NAMES[b] for b in self.order)

    @property
    def row_id(self) -> str:
        return "".join(SHORT_NAMES[b] for b in self.order) + ("_iap" if self.prompting else "_noiap")


def ablation_rows(mode: str = "all") -> list[AblationRow]:
    rows = []
    if mode in ("units", "all"):
        rows += [AblationRow("units", o, iap) for o in UNIT_ORDERS for iap in (False, True)]
    if mode in ("orders", "all"):
        rows += [AblationRow("orders", o, iap) for o in ORDER_ROWS for iap in (False, True)]
    return rows


def unique_configs(rows: list[AblationRow]) -> list[AblationRow]:
    """Rows with distinct (order, prompting), first occurrence kept."""
    seen, out = set(), []
    for r in rows:
        if (r.order, r.prompting) not in seen:
            seen.add((r.order, r.prompting))
            out.append(r)
    return out


def row_config(base: RunConfig, row: AblationRow) -> RunConfig:
    # The mode only selects rows; keep it out of each row's identity.
    return base.replace(order=list(row.order), prompting=row.prompting, ablate_mode="all")


def run_row(base: RunConfig, row: AblationRow, fixtures: Fixtures, split: SplitSpec, out_dir: Path) -> dict:
    """Train and evaluate one configuration, writing its artifacts into ``out_dir``."""
    cfg = row_config(base, row)
    digest = cfg.digest()
    result_path = out_dir / "result.json"
    if result_path.exists():
        cached = json.loads(result_path.read_text(encoding="utf-8"))
        if cached.get("config_digest") == digest:
            return cached
    out_dir.mkdir(parents=True, exist_ok=True)
    trained = train_model(cfg, fixtures, split)
    ckpt_io.save(out_dir / "checkpoint.json",
                 ckpt_io.Checkpoint(trained.model, cfg.train_config().digest(), fixtures.vocabulary.digest()))
    write_loss_trace(out_dir / "loss.csv", trained.trace, digest)
    detections, report = evaluate_model(cfg, fixtures, split, trained.model, digest)
    write_detections(out_dir / "detections.jsonl", detections, digest)
    write_report(out_dir / "report.json", report)
    result = {"row_id": row.row_id, "order": row.label, "prompting": row.prompting,
              "mAP": report.mean_ap, "config_digest": digest, "split_id": split.split_id}
    result_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


def run_ablation(base: RunConfig, fixtures: Fixtures, split: SplitSpec, out_dir: str | Path,
                 mode: str = "all", progress: Callable[[dict], None] | None = None) -> dict:
    """Run every configuration of ``mode`` and write ``ablation.json`` / ``ablation.txt``."""
    out = Path(out_dir)
    rows = ablation_rows(mode)
    results = {}
    for row in unique_configs(rows):
        res = run_row(base, row, fixtures, split, out / "rows" / row.row_id)
        results[(row.order, row.prompting)] = res["mAP"]
        if progress is not None:
            progress(res)
    summary = summarize(rows, results, base.digest(ablate_mode=mode), split.split_id)
    (out / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "ablation.txt").write_text(format_tables(summary) + "\n", encoding="utf-8")
    return summary


def summarize(rows: list[AblationRow], results: dict, digest: str, split_id: str) -> dict:
    """Tables with -IAP / +IAP columns and the trends worth reading off them."""
    tables: dict[str, list[dict]] = {}
    for row in rows:
        if row.prompting:
            continue
        no_iap = results[(row.order, False)]
        iap = results[(row.order, True)]
        tables.setdefault(row.table, []).append({
            "order": row.label, "mAP_no_iap": no_iap, "mAP_iap": iap, "iap_gain": iap - no_iap,
        })
    trends = {}
    if "units" in tables:
        unit = tables["units"]
        person_only, full = unit[0], unit[-1]
        trends["full_minus_person_only_no_iap"] = full["mAP_no_iap"] - person_only["mAP_no_iap"]
        trends["full_minus_person_only_iap"] = full["mAP_iap"] - person_only["mAP_iap"]
        trends["unit_gains_iap"] = [b["mAP_iap"] - a["mAP_iap"] for a, b in zip(unit, unit[1:])]
    if "orders" in tables:
        best = max(tables["orders"], key=lambda r: (r["mAP_iap"], r["order"]))
        trends["best_order_iap"] = best["order"]
    all_rows = [r for t in tables.values() for r in t]
    if all_rows:
        trends["mean_iap_gain"] = sum(r["iap_gain"] for r in all_rows) / len(all_rows)
    return {"format": "iclip-ablation", "version": 1, "config_digest": digest, "split_id": split_id,
            "tables": tables, "trends": trends}


def format_tables(summary: dict) -> str:
    titles = {"units": "Interaction units", "orders": "Block order (memory last)"}
    lines = [f"# config_digest={summary['config_digest']} split_id={summary['split_id']}"]
    for name, rows in summary["tables"].items():
        lines += ["", titles.get(name, name), f"{'order':<16}{'-IAP':>8}{'+IAP':>8}{'gain':>8}"]
        for r in rows:
            lines.append(f"{r['order']:<16}{100 * r['mAP_no_iap']:8.2f}{100 * r['mAP_iap']:8.2f}"
                         f"{100 * r['iap_gain']:8.2f}")
    if summary["trends"]:
        lines += ["", "Trends"]
        for k, v in summary["trends"].items():
            shown = f"{100 * v:.2f}" if isinstance(v, float) else (
                ", ".join(f"{100 * x:.2f}" for x in v) if isinstance(v, list) else str(v))
            lines.append(f"  {k}: {shown}")
    return "\n".join(lines)


def dry_run_table(base: RunConfig, mode: str = "all") -> str:
    """The configuration matrix, without training anything."""
    rows = ablation_rows(mode)
    unique = {(r.order, r.prompting) for r in unique_configs(rows)}
    lines = [f"{'table':<8}{'order':<16}{'IAP':<6}{'row_id':<14}digest"]
    for r in rows:
        lines.append(f"{r.table:<8}{r.label:<16}{('on' if r.prompting else 'off'):<6}{r.row_id:<14}"
                     f"{row_config(base, r).digest()}")
    lines.append(f"{len(rows)} rows, {len(unique)} distinct trainings")
    return "\n".join(lines)
