"""
Self-contained model artifact.

Layout (little-endian):
    b"DSCA" | u16 version | u16 section count
    per section: u8 name length | name | u64 payload length | u32 CRC-32 | payload

Sections, in order: spec, params, layout, table, quantiles, metadata. JSON
payloads are canonical (sorted keys, compact separators); params are <f4 arrays
concatenated in the order listed by the `spec` section's parameter index.
"""
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from confidence.quantiles import QuantileTable
from errors import ArtifactError, ChecksumError
from heads.variants import OutputConfig, configure_output
from models import ArchitectureSpec, HeadLayout, HeadsConfig, MappingTable, OutputVariant, PipelineConfig
from network.resnet import Model

logger = logging.getLogger(__name__)

MAGIC = b"DSCA"
FORMAT_VERSION = 1
SECTIONS = ("spec", "params", "layout", "table", "quantiles", "metadata")
PARAM_DTYPE = np.dtype("<f4")


@dataclass
class ModelArtifact:
    variant: OutputVariant
    models: List[Model]
    heads: HeadsConfig
    pipeline: PipelineConfig
    quantiles: Optional[QuantileTable] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    _output: Optional[OutputConfig] = field(default=None, repr=False)

    @property
    def output(self) -> OutputConfig:
        if self._output is None:
            self._output = configure_output(self.variant, self.heads)
        return self._output

    @property
    def means(self) -> Tuple[float, float]:
        return self.pipeline.image_mean or 0.0, self.pipeline.heatmap_mean or 0.0


def _canonical(data: Any) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode()


def _payloads(artifact: ModelArtifact) -> Dict[str, bytes]:
    networks, blobs = [], []
    for network, model in zip(artifact.output.networks, artifact.models):
        arrays = model.named_arrays()
        networks.append({
            "name": network.name,
            "architecture": model.spec.model_dump(mode="json"),
            "index": [[name, list(array.shape)] for name, array in arrays],
        })
        blobs.extend(np.ascontiguousarray(array, dtype=PARAM_DTYPE).tobytes() for _, array in arrays)
    spec = {
        "variant": OutputVariant(artifact.variant).value,
        "pipeline": artifact.pipeline.model_dump(mode="json"),
        "networks": networks,
    }
    quantiles = artifact.quantiles.model_dump(mode="json") if artifact.quantiles is not None else None
    return {
        "spec": _canonical(spec),
        "params": b"".join(blobs),
        "layout": _canonical(artifact.heads.layout.model_dump(mode="json")),
        "table": _canonical({
            "table": artifact.heads.table.model_dump(mode="json"),
            "zero_epsilon": artifact.heads.zero_epsilon,
        }),
        "quantiles": _canonical(quantiles),
        "metadata": _canonical(artifact.metadata),
    }


def dump_artifact(artifact: ModelArtifact) -> bytes:
    payloads = _payloads(artifact)
    parts = [struct.pack("<4sHH", MAGIC, FORMAT_VERSION, len(SECTIONS))]
    for name in SECTIONS:
        payload = payloads[name]
        encoded = name.encode()
        parts.append(struct.pack("<B", len(encoded)) + encoded)
        parts.append(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        parts.append(payload)
    return b"".join(parts)


def save_artifact(artifact: ModelArtifact, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_artifact(artifact))
    logger.info("artifact written to %s", path)
    return path


def _read_sections(data: bytes) -> Dict[str, Tuple[int, int, int]]:
    """name -> (payload start, payload end, stored crc)"""
    if len(data) < 8 or data[:4] != MAGIC:
        raise ArtifactError("not a model artifact (bad magic)", field="magic")
    version, count = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported artifact version {version}; this build reads {FORMAT_VERSION}",
                            field="version")
    offset, sections = 8, {}
    for _ in range(count):
        if offset + 1 > len(data):
            raise ArtifactError("artifact truncated in the section table", field="sections")
        (length,) = struct.unpack_from("<B", data, offset)
        name = data[offset + 1:offset + 1 + length].decode(errors="replace")
        offset += 1 + length
        if offset + 12 > len(data):
            raise ArtifactError(f"artifact truncated in section '{name}'", field=name)
        size, crc = struct.unpack_from("<QI", data, offset)
        offset += 12
        if offset + size > len(data):
            raise ArtifactError(f"artifact truncated in section '{name}'", field=name)
        sections[name] = (offset, offset + size, crc)
        offset += size
    missing = [name for name in SECTIONS if name not in sections]
    if missing:
        raise ArtifactError(f"artifact lacks sections {missing}", field="sections")
    return sections


def section_spans(data: bytes) -> Dict[str, Tuple[int, int]]:
    """Byte range of every section payload"""
    return {name: (start, end) for name, (start, end, _) in _read_sections(data).items()}


def parse_artifact(data: bytes) -> ModelArtifact:
    sections = _read_sections(data)
    payloads = {}
    for name, (start, end, crc) in sections.items():
        payload = data[start:end]
        if zlib.crc32(payload) != crc:
            raise ChecksumError(name)
        payloads[name] = payload
    try:
        spec = json.loads(payloads["spec"])
        table_section = json.loads(payloads["table"])
        heads = HeadsConfig(
            layout=HeadLayout(**json.loads(payloads["layout"])),
            table=MappingTable(**table_section["table"]),
            zero_epsilon=table_section["zero_epsilon"],
        )
        quantiles_data = json.loads(payloads["quantiles"])
        metadata = json.loads(payloads["metadata"])
        pipeline = PipelineConfig(**spec["pipeline"])
    except (ValueError, KeyError, TypeError) as e:
        raise ArtifactError(f"artifact sections do not parse: {e}", field="spec")

    params = payloads["params"]
    offset, models = 0, []
    for network in spec["networks"]:
        model = Model(ArchitectureSpec(**network["architecture"]))
        arrays = {}
        for name, shape in network["index"]:
            count = int(np.prod(shape)) if shape else 1
            end = offset + count * PARAM_DTYPE.itemsize
            if end > len(params):
                raise ArtifactError(f"params section too short for '{name}'", field="params")
            arrays[name] = np.frombuffer(params[offset:end], dtype=PARAM_DTYPE).reshape(shape)
            offset = end
        model.load_arrays(arrays)
        models.append(model)
    if offset != len(params):
        raise ArtifactError("params section has trailing bytes", field="params")

    return ModelArtifact(
        variant=OutputVariant(spec["variant"]),
        models=models,
        heads=heads,
        pipeline=pipeline,
        quantiles=QuantileTable(**quantiles_data) if quantiles_data is not None else None,
        metadata=metadata,
    )


def load_artifact(path) -> ModelArtifact:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ArtifactError(f"artifact not found: {path}", field="path")
    return parse_artifact(data)
