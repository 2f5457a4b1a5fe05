"""Flat-file formats: chain JSON, metric CSVs.

Chain files are self-contained: consensus parameters, the block array, and
a trailing tip commitment (the id of the last block) so that no header byte
is left uncovered by a check.  Hashes are 64-char lowercase hex, transaction
payloads base64, and the proof encoding follows the problem kind named in
the parameters.
"""

from __future__ import annotations

import base64
import binascii
import json
import struct
from pathlib import Path

from . import chain as chaincore
from . import engine
from .simulate import BlockRecord, RejectionRecord

RESULTS_HEADER = "height,miner_id,k,block_time_s,pow_value,chain_best"
REJECTIONS_HEADER = "virtual_time,block_id,reason"


class StorageError(Exception):
    pass


def _hex(data: bytes) -> str:
    return data.hex()


def _unhex(text, name: str) -> bytes:
    if not isinstance(text, str):
        raise StorageError(f"{name} must be a hex string")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise StorageError(f"{name}: {exc}") from exc
    if raw.hex() != text or len(raw) != chaincore.HASH_SIZE:
        raise StorageError(f"{name} must be 64 lowercase hex chars")
    return raw


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text, name: str) -> bytes:
    if not isinstance(text, str):
        raise StorageError(f"{name} must be a base64 string")
    try:
        raw = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise StorageError(f"{name}: {exc}") from exc
    if base64.b64encode(raw).decode("ascii") != text:
        raise StorageError(f"{name} is not canonical base64")
    return raw


def _int(value, name: str, lo: int = 0, hi: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise StorageError(f"{name} must be an integer")
    if value < lo or (hi is not None and value > hi):
        raise StorageError(f"{name} out of range")
    return value


def _float(value, name: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise StorageError(f"{name} must be a number")
    return float(value)


def _problem_kind(problem_id: str) -> str:
    kind = problem_id.split(":", 1)[0]
    if kind not in ("tsp", "continuous"):
        raise StorageError(f"unknown problem kind in {problem_id!r}")
    return kind


def _theta_to_json(theta: bytes, kind: str):
    if kind == "tsp":
        count = len(theta) // 2
        return list(struct.unpack(f"<{count}H", theta))
    return theta.decode("utf-8").split(",")


def _theta_from_json(value, kind: str) -> bytes:
    if kind == "tsp":
        if (not isinstance(value, list)
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           and 0 <= v < 2**16 for v in value)):
            raise StorageError("tsp theta must be a list of u16 city labels")
        return struct.pack(f"<{len(value)}H", *value)
    if not isinstance(value, list) or not all(isinstance(v, str)
                                              for v in value):
        raise StorageError("continuous theta must be a list of strings")
    return ",".join(value).encode("utf-8")


def _pow_to_json(proof: engine.ProofOfWork, kind: str) -> dict:
    return {
        "theta": _theta_to_json(proof.theta_star, kind),
        "objective_value": proof.objective_value,
        "index_set": list(proof.index_set),
    }


def _pow_from_json(obj, kind: str) -> engine.ProofOfWork:
    if not isinstance(obj, dict):
        raise StorageError("pow must be an object")
    index_set = obj.get("index_set")
    if (not isinstance(index_set, list)
            or not all(isinstance(i, int) and not isinstance(i, bool)
                       for i in index_set)):
        raise StorageError("index_set must be a list of integers")
    sorted_set = tuple(sorted(set(index_set)))
    if list(sorted_set) != index_set:
        raise StorageError("index_set must be sorted and duplicate-free")
    return engine.ProofOfWork(
        theta_star=_theta_from_json(obj.get("theta"), kind),
        objective_value=_float(obj.get("objective_value"), "objective_value"),
        index_set=sorted_set,
    )


def params_to_json(params: chaincore.ChainParams) -> dict:
    d = params.difficulty
    return {
        "problem": params.problem,
        "k0": d.k, "k_min": d.k_min, "k_max": d.k_max,
        "window": d.window, "low_s": d.low_s, "high_s": d.high_s,
        "t": d.t, "sig_figs": d.sig_figs, "delta": d.delta,
        "delta_min": d.delta_min, "cert_samples": d.cert_samples,
        "cert_scale": d.cert_scale, "restart_after": d.restart_after,
        "exhaustive_cap": d.exhaustive_cap,
    }


def params_from_json(obj) -> chaincore.ChainParams:
    if not isinstance(obj, dict) or not isinstance(obj.get("problem"), str):
        raise StorageError("params must name a problem")
    _problem_kind(obj["problem"])
    try:
        difficulty = engine.DifficultyParams(
            k=_int(obj.get("k0"), "k0", 1, 0xFFFF),
            window=_int(obj.get("window"), "window", 1),
            low_s=_float(obj.get("low_s"), "low_s"),
            high_s=_float(obj.get("high_s"), "high_s"),
            k_min=_int(obj.get("k_min"), "k_min", 1, 0xFFFF),
            k_max=_int(obj.get("k_max"), "k_max", 1, 0xFFFF),
            t=_int(obj.get("t"), "t", 2),
            sig_figs=(None if obj.get("sig_figs") is None
                      else _int(obj["sig_figs"], "sig_figs", 1)),
            delta=(None if obj.get("delta") is None
                   else _float(obj["delta"], "delta")),
            delta_min=_float(obj.get("delta_min", 1e-6), "delta_min"),
            cert_samples=(None if obj.get("cert_samples") is None
                          else _int(obj["cert_samples"], "cert_samples", 1)),
            cert_scale=_int(obj.get("cert_scale", 40), "cert_scale", 1),
            restart_after=(None if obj.get("restart_after") is None
                           else _int(obj["restart_after"], "restart_after", 1)),
            exhaustive_cap=_int(obj.get("exhaustive_cap", 20_000),
                                "exhaustive_cap", 0),
        )
    except ValueError as exc:
        raise StorageError(f"bad difficulty params: {exc}") from exc
    return chaincore.ChainParams(obj["problem"], difficulty)


def _block_to_json(block: chaincore.Block, kind: str) -> dict:
    hdr = block.header
    return {
        "header": {
            "version": hdr.version,
            "prev_block_hash": _hex(hdr.prev_block_hash),
            "merkle_root": _hex(hdr.merkle_root),
            "timestamp_ms": hdr.timestamp_ms,
            "difficulty_k": hdr.difficulty_k,
            "pow_commitment": _hex(hdr.pow_commitment),
        },
        "transactions": [_b64(tx.payload) for tx in block.transactions],
        "pow": None if block.pow is None else _pow_to_json(block.pow, kind),
    }


def _block_from_json(obj, kind: str) -> chaincore.Block:
    if not isinstance(obj, dict):
        raise StorageError("block must be an object")
    hdr = obj.get("header")
    if not isinstance(hdr, dict):
        raise StorageError("block header missing")
    try:
        header = chaincore.BlockHeader(
            version=_int(hdr.get("version"), "version", 0, 2**32 - 1),
            prev_block_hash=_unhex(hdr.get("prev_block_hash"),
                                   "prev_block_hash"),
            merkle_root=_unhex(hdr.get("merkle_root"), "merkle_root"),
            timestamp_ms=_int(hdr.get("timestamp_ms"), "timestamp_ms",
                              0, 2**64 - 1),
            difficulty_k=_int(hdr.get("difficulty_k"), "difficulty_k",
                              0, 2**16 - 1),
            pow_commitment=_unhex(hdr.get("pow_commitment"),
                                  "pow_commitment"),
        )
    except ValueError as exc:
        raise StorageError(str(exc)) from exc
    txs_json = obj.get("transactions")
    if not isinstance(txs_json, list):
        raise StorageError("transactions must be a list")
    try:
        txs = tuple(chaincore.Transaction(_unb64(t, "transaction"))
                    for t in txs_json)
    except ValueError as exc:
        raise StorageError(str(exc)) from exc
    pow_json = obj.get("pow")
    proof = None if pow_json is None else _pow_from_json(pow_json, kind)
    return chaincore.Block(header=header, transactions=txs, pow=proof)


def chain_to_json(chn: chaincore.Chain) -> dict:
    kind = _problem_kind(chn.params.problem)
    return {
        "params": params_to_json(chn.params),
        "blocks": [_block_to_json(b, kind) for b in chn.blocks],
        "tip_id": _hex(chn.tip_id()),
    }


def chain_from_json(obj) -> tuple[chaincore.Chain, bytes]:
    """Parse a chain file; returns (chain, declared tip id).

    The caller compares the declared tip against the recomputed one; a
    mismatch means the last header was tampered with.
    """
    if not isinstance(obj, dict):
        raise StorageError("chain file must be a JSON object")
    params = params_from_json(obj.get("params"))
    kind = _problem_kind(params.problem)
    blocks_json = obj.get("blocks")
    if not isinstance(blocks_json, list) or not blocks_json:
        raise StorageError("chain file must hold a non-empty block array")
    blocks = tuple(_block_from_json(b, kind) for b in blocks_json)
    tip = _unhex(obj.get("tip_id"), "tip_id")
    return chaincore.Chain(params, blocks), tip


def dumps_chain(chn: chaincore.Chain) -> str:
    return json.dumps(chain_to_json(chn), indent=2, sort_keys=True) + "\n"


def save_chain(chn: chaincore.Chain, path) -> None:
    Path(path).write_text(dumps_chain(chn), encoding="utf-8")


def load_chain(path) -> tuple[chaincore.Chain, bytes]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StorageError(f"cannot parse {path}: {exc}") from exc
    return chain_from_json(obj)


# -- CSV metrics -----------------------------------------------------------------

def results_csv(records) -> str:
    lines = [RESULTS_HEADER]
    for r in records:
        lines.append(f"{r.height},{r.miner},{r.k},{r.block_time_s!r},"
                     f"{r.pow_value!r},{r.chain_best!r}")
    return "\n".join(lines) + "\n"


def write_results_csv(records, path) -> None:
    Path(path).write_text(results_csv(records), encoding="utf-8")


def read_results_csv(path) -> list[BlockRecord]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != RESULTS_HEADER:
        raise StorageError("not a results csv")
    out = []
    for ln in lines[1:]:
        height, miner, k, bt, pv, cb = ln.split(",")
        out.append(BlockRecord(int(height), int(miner), int(k),
                               float(bt), float(pv), float(cb)))
    return out


def rejections_csv(rejections) -> str:
    lines = [REJECTIONS_HEADER]
    for r in rejections:
        lines.append(f"{r.time_s!r},{r.block_id.hex()},{r.reason}")
    return "\n".join(lines) + "\n"


def write_rejections_csv(rejections, path) -> None:
    Path(path).write_text(rejections_csv(rejections), encoding="utf-8")


def read_rejections_csv(path) -> list[RejectionRecord]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != REJECTIONS_HEADER:
        raise StorageError("not a rejections csv")
    out = []
    for ln in lines[1:]:
        t, bid, reason = ln.split(",", 2)
        out.append(RejectionRecord(float(t), bytes.fromhex(bid), reason))
    return out
