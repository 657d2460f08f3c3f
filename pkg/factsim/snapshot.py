"""Model snapshot files and round-history CSV export."""
import csv
import json
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .federation import RoundRecord
from .nn import PARTITIONS, ArchitectureSpec, ModelParams
from .utils import FormatError

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT_VERSION = 1
HISTORY_COLUMNS = ["round", "pair", "src_loss_1", "src_loss_2", "ft_loss_1", "ft_loss_2", "idd", "target_acc"]


def snapshot_to_dict(params: ModelParams, meta: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    payload = {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "layer_spec": params.spec.model_dump(mode="json"),
    }
    for name in PARTITIONS:
        payload[name] = [{"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}
                         for a in params.partition(name)]
    if meta:
        payload["meta"] = meta
    return payload


def snapshot_from_dict(payload: Dict[str, Any]) -> Tuple[ModelParams, Dict[str, Any]]:
    version = payload.get("format_version")
    if version != SNAPSHOT_FORMAT_VERSION:
        raise FormatError(f"unsupported snapshot format_version {version!r}")
    try:
        spec = ArchitectureSpec.model_validate(payload["layer_spec"])
        partitions = {}
        for name in PARTITIONS:
            arrays = []
            for entry in payload[name]:
                shape = tuple(int(s) for s in entry["shape"])
                values = np.asarray(entry["values"], dtype=np.float64)
                if values.size != int(np.prod(shape, dtype=np.int64)):
                    raise FormatError(f"{name} array declares shape {shape} but holds {values.size} values")
                arrays.append(values.reshape(shape))
            partitions[name] = arrays
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed snapshot: missing or invalid field {e}") from e
    except ValidationError as e:
        raise FormatError(f"snapshot layer_spec is invalid: {e}") from e
    return ModelParams(spec, partitions["generator"], partitions["head"]), payload.get("meta", {})


def save_snapshot(params: ModelParams, path: str, meta: Optional[Dict[str, Any]] = None) -> None:
    """Write params as self-describing JSON; floats keep their shortest round-trip repr."""
    with open(path, "w") as f:
        json.dump(snapshot_to_dict(params, meta), f)
    logger.info(f"Saved snapshot ({params.num_params} parameters) to {path}")


def load_snapshot(path: str) -> Tuple[ModelParams, Dict[str, Any]]:
    try:
        with open(path, "r") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not a JSON snapshot: {e}") from e
    if not isinstance(payload, dict):
        raise FormatError(f"{path} does not hold a snapshot object")
    return snapshot_from_dict(payload)


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def history_rows(history: Sequence[RoundRecord]) -> List[List[str]]:
    rows = []
    for record in history:
        ft = record.finetune_losses or (None, None)
        rows.append([str(record.round), "|".join(record.pair),
                     _cell(record.source_losses[0]), _cell(record.source_losses[1]),
                     _cell(ft[0]), _cell(ft[1]), _cell(record.idd), _cell(record.target_accuracy)])
    return rows


def write_history_csv(history: Sequence[RoundRecord], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        writer.writerows(history_rows(history))
    logger.info(f"Wrote {len(history)} rounds of history to {path}")
