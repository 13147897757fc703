"""Result persistence and report emission.

Results are JSON documents in a flat store directory, one file per
``(command, encoder id, content hash)``. The hash covers the resolved run
configuration and the digests of every input file, so an identical rerun
finds its document and does nothing.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .decomposition import DEFAULT_SETTINGS, RiskComponents
from .errors import DataValidationError, UsageError

COMPONENT_COLUMNS = ("encoder", "hr_FF", "hr_AF", "hr_AS", "hr_US",
                     "approx", "usability", "probe_gen", "encoder_gen", "total")
SETTING_COLUMNS = tuple(f"risk_{s}" for s in DEFAULT_SETTINGS)
#: Metadata columns present in real model tables; left empty for synthetic runs.
METADATA_COLUMNS = ("objective", "architecture", "n_params", "year")
FRONTIER_COLUMNS = ("encoder", "usability", "probe_gen")
FEWSHOT_COLUMNS = ("setting", "kind", "mean", "std", "n_seeds", "n_train", "infeasible")
RADAR_METRICS = ("approx", "usability", "probe_gen", "encoder_gen", "total")
#: Settings shown by the accuracy table, as percentages.
ACCURACY_SETTINGS = ("100%", "1%", "3-shot")


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def pretty_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def content_hash(doc) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "x"


class ResultStore:
    """Append-only directory of result documents."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, command: str, encoder: str, key: str) -> Path:
        return self.root / f"{_slug(command)}__{_slug(encoder)}__{key[:16]}.json"

    def get(self, command: str, encoder: str, key: str):
        path = self.path_for(command, encoder, key)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def put(self, doc: dict, force: bool = False) -> tuple:
        """Store a document; returns ``(path, written)``. Existing keys are kept unless forced."""
        path = self.path_for(doc["command"], doc["encoder"], doc["key"])
        if path.exists() and not force:
            return path, False
        atomic_write(path, pretty_json(doc))
        return path, True

    def documents(self, command: str | None = None) -> list:
        if not self.root.is_dir():
            return []
        docs = []
        for path in sorted(self.root.glob("*.json")):
            doc = json.loads(path.read_text())
            if command is None or doc.get("command") == command:
                docs.append(doc)
        return docs


def make_document(command: str, encoder: str, config: dict, result) -> dict:
    key = content_hash({"command": command, "encoder": encoder, "config": config})
    return {"command": command, "encoder": encoder, "key": key, "config": config, "result": result}


def radar_normalize(table: dict) -> dict:
    """Min-max scale each metric so the best (lowest) model is 1 and the worst 0.

    ``table`` maps model -> {metric: value}. Constant metrics carry no
    ranking information and are dropped with a warning.
    """
    models = sorted(table)
    if len(models) < 2:
        raise DataValidationError("radar normalization needs at least 2 models")
    metrics = []
    for m in table[models[0]]:
        if all(m in table[k] for k in models):
            metrics.append(m)
    out = {k: {} for k in models}
    for m in metrics:
        col = np.array([float(table[k][m]) for k in models])
        lo, hi = float(col.min()), float(col.max())
        if hi == lo:
            warnings.warn(f"metric {m!r} is constant across models; dropped", RuntimeWarning, stacklevel=2)
            continue
        for k, v in zip(models, col):
            out[k][m] = 1.0 - (float(v) - lo) / (hi - lo)
    return out


def accuracy(risk) -> float | None:
    """Percent accuracy, rounded to one decimal, for presentation only."""
    if risk is None or (isinstance(risk, float) and math.isnan(risk)):
        return None
    return round(100.0 * (1.0 - float(risk)), 1)


def accuracy_row(risks: dict, settings=ACCURACY_SETTINGS) -> list:
    return [accuracy(risks.get(s)) for s in settings]


def format_accuracy_row(name: str, risks: dict, settings=ACCURACY_SETTINGS) -> str:
    cells = ["" if a is None else f"{a:.1f}" for a in accuracy_row(risks, settings)]
    return " & ".join([name, *cells])


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else _cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def component_table(text_rows) -> str:
    """Four-row human-readable component table."""
    lines = [f"{'component':<14}{'risk':>10}"]
    for name, value in text_rows:
        lines.append(f"{name:<14}{value:>10.4f}")
    return "\n".join(lines)


def components_rows(comps: RiskComponents) -> list:
    return [("approx", comps.approx), ("usability", comps.usability),
            ("probe_gen", comps.probe_gen), ("encoder_gen", comps.encoder_gen)]


def fewshot_rows(results: list) -> list:
    rows = []
    for r in results:
        rows.append({"setting": r["setting"], "kind": r["kind"], "mean": r["mean"], "std": r["std"],
                     "n_seeds": len(r["risks"]),
                     "n_train": float(np.mean(r["n_train"])) if r["n_train"] else None,
                     "infeasible": r["infeasible"]})
    return rows


def build_report(store: ResultStore) -> dict:
    """Assemble the report bundle from decompose and fewshot documents.

    Returns a dict of file name -> text: ``components.csv``, ``radar.json``,
    ``scaling_obs.json`` and ``frontier.csv``.
    """
    decomp = store.documents("decompose")
    if not decomp:
        raise UsageError(f"result store {store.root} has no decompose results")
    fewshot = {d["encoder"]: d for d in store.documents("fewshot")}
    by_encoder = {}
    for d in decomp:
        by_encoder[d["encoder"]] = d
    rows, radar_in, frontier, obs = [], {}, [], []
    for enc in sorted(by_encoder):
        doc = by_encoder[enc]
        comp = doc["result"]["components"]
        row = {"encoder": enc, **{c: comp.get(c) for c in COMPONENT_COLUMNS[1:]}}
        meta = doc["config"].get("metadata") or {}
        for c in METADATA_COLUMNS:
            row[c] = meta.get(c)
        fs = fewshot.get(enc)
        if fs:
            for r in fs["result"]["settings"]:
                row[f"risk_{r['setting']}"] = r["mean"]
                if r["mean"] is not None and r["n_train"]:
                    obs.append({"encoder": enc, "components": comp,
                                "N": int(doc["result"].get("n_train") or max(r["n_train"])),
                                "n": int(round(float(np.mean(r["n_train"])))),
                                "observed_risk": r["mean"], "setting": r["setting"],
                                **({"group": meta["group"]} if "group" in meta else {}),
                                **({"p": doc["result"]["n_probe_params"]}
                                   if "n_probe_params" in doc["result"] else {})})
        rows.append(row)
        radar_in[enc] = {m: comp[m] for m in RADAR_METRICS}
        frontier.append({"encoder": enc, "usability": comp["usability"], "probe_gen": comp["probe_gen"]})
    columns = COMPONENT_COLUMNS + SETTING_COLUMNS + METADATA_COLUMNS
    radar = {"metrics": list(RADAR_METRICS), "raw": radar_in,
             "normalized": radar_normalize(radar_in) if len(radar_in) >= 2 else {}}
    return {
        "components.csv": to_csv(rows, columns),
        "radar.json": pretty_json(radar),
        "scaling_obs.json": pretty_json({"observations": obs}),
        "frontier.csv": to_csv(frontier, FRONTIER_COLUMNS),
    }


def load_schema(name: str) -> dict:
    """A shipped JSON schema, e.g. ``load_schema("decompose")``."""
    from importlib import resources

    return json.loads(resources.files("riskdec").joinpath("schemas", f"{name}.json").read_text())
