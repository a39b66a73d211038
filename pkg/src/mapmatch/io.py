"""JSONL / JSON / CSV readers and writers for toolkit artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

from .errors import ParseError
from .trajgen import GenerationConfig, GpsTrajectory


def write_corpus(trajectories: list[GpsTrajectory], path, *, include_truth: bool = True) -> None:
    """One JSON object per line: traj_id, points, and (optionally) truth."""
    with open(path, "w", encoding="utf-8") as f:
        for traj in trajectories:
            doc = {"traj_id": traj.traj_id, "points": [[lon, lat] for lon, lat in traj.points]}
            if include_truth and traj.truth is not None:
                doc["truth"] = list(traj.truth)
            f.write(json.dumps(doc, separators=(",", ":")))
            f.write("\n")


def read_corpus(path) -> list[GpsTrajectory]:
    trajectories = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                trajectories.append(
                    GpsTrajectory(
                        traj_id=str(doc["traj_id"]),
                        points=[(float(p[0]), float(p[1])) for p in doc["points"]],
                        truth=[int(e) for e in doc["truth"]] if "truth" in doc else None,
                    )
                )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"cannot parse corpus {path}: {exc}") from exc
    return trajectories


def write_corpus_manifest(path, cfg: GenerationConfig, count: int, *, pseudo_real: bool, network_path=None) -> None:
    doc = {
        "generation_config": cfg.to_dict(),
        "count": count,
        "pseudo_real": pseudo_real,
    }
    if network_path is not None:
        # content hash identifies the network; only the file name is kept so
        # manifests stay byte-identical across output locations
        doc["network"] = {"file": Path(network_path).name, "sha256": file_sha256(network_path)}
    write_json(path, doc)


def write_predictions(path, rows: list[dict]) -> None:
    """Rows carry traj_id, route, and optionally probs (one vector per point)."""
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, separators=(",", ":")))
            f.write("\n")


def read_predictions(path) -> list[dict]:
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse predictions {path}: {exc}") from exc
    return rows


def write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse JSON {path}: {exc}") from exc


def write_metrics_csv(path, rows: list[dict]) -> None:
    """RFC-4180 CSV with the fixed column set model,level,ahd,fscore,bleu,n_traj."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["model", "level", "ahd", "fscore", "bleu", "n_traj"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
