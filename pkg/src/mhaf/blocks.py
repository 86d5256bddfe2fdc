"""Composite blocks: conv+BN+SiLU units, the expand/mix/project bottleneck,
the multi-stream aggregation module built from it, and the two
cross-resolution fusion nodes used by the neck.

Everything here is a pure function over explicit weight structures; there
is no hidden module state.  Each structure exists in a training form
(convs followed by batch norm, multi-branch mixers) and a deployed form
(BN folded away, branches merged), and the ``deploy_*`` functions convert
one into the other while preserving the computed function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KernelError, ShapeError, StateError
from .reparam import (
    RepHConvSpec,
    RepHConvWeights,
    fuse_conv_bn,
    merge_heterogeneous,
    rephconv_forward,
)
from .tensor import (
    BNParams,
    ConvKernel,
    avgpool2d,
    batchnorm_infer,
    concat_channels,
    conv2d_fast,
    silu,
    split_channels,
    upsample2x,
)

__all__ = [
    "ConvUnit",
    "ConvUnitSpec",
    "MixerSpec",
    "BlockWeights",
    "RepHMSSpec",
    "RepHMSWeights",
    "SAFWeights",
    "AAFWeights",
    "conv_unit_forward",
    "block_forward",
    "rephms_forward",
    "saf_fuse",
    "aaf_fuse",
    "rephms_layout",
    "saf_layout",
    "aaf_layout",
    "rephms_concat_width",
    "rephms_from_units",
    "deploy_conv_unit",
    "deploy_block",
    "deploy_rephms",
    "random_conv_unit",
    "random_rephms",
    "saf_output_channels",
]


@dataclass
class ConvUnit:
    """A convolution, optionally batch-normalized, optionally activated.

    ``bn is None`` means the normalization has been folded into the conv
    (deployed form) or the unit never had one.
    """

    kernel: ConvKernel
    bn: BNParams | None = None
    act: bool = True

    def __post_init__(self):
        if self.bn is not None and self.bn.channels != self.kernel.out_channels:
            raise ShapeError(
                f"conv produces {self.kernel.out_channels} channels but BN "
                f"carries {self.bn.channels}"
            )


def conv_unit_forward(x: np.ndarray, unit: ConvUnit) -> np.ndarray:
    y = conv2d_fast(x, unit.kernel)
    if unit.bn is not None:
        y = batchnorm_infer(y, unit.bn)
    return silu(y) if unit.act else y


def deploy_conv_unit(unit: ConvUnit) -> ConvUnit:
    """Fold the BN (if any) into the conv, keeping the activation flag."""
    if unit.bn is None:
        return unit
    return ConvUnit(kernel=fuse_conv_bn(unit.kernel, unit.bn), bn=None, act=unit.act)


@dataclass(frozen=True)
class ConvUnitSpec:
    """Static description of a conv unit inside a composite module; ``path``
    is the dotted slot name used for weight binding."""

    path: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    groups: int = 1
    act: bool = True


@dataclass(frozen=True)
class MixerSpec:
    """Static description of a multi-branch depthwise mixer slot."""

    path: str
    spec: RepHConvSpec


@dataclass
class BlockWeights:
    """The bottleneck block: 1x1 expand (BN+SiLU), multi-branch depthwise
    mixer (per-branch BN, linear), 1x1 pointwise (BN+SiLU), and a linear
    1x1 projection back to the block width (BN, no activation)."""

    expand: ConvUnit
    mixer: RepHConvWeights
    pw: ConvUnit
    proj: ConvUnit

    def __post_init__(self):
        ec = self.expand.kernel.out_channels
        if self.mixer.spec.channels != ec:
            raise ShapeError(
                f"mixer runs on {self.mixer.spec.channels} channels but expand "
                f"produces {ec}"
            )
        if self.pw.kernel.in_channels != ec or self.pw.kernel.out_channels != ec:
            raise ShapeError("pointwise conv must preserve the expanded width")
        if self.proj.kernel.in_channels != ec:
            raise ShapeError("projection conv must consume the expanded width")
        if self.proj.act:
            raise StateError("projection unit must be linear (no activation)")

    @property
    def channels(self) -> int:
        return self.proj.kernel.out_channels


def block_forward(x: np.ndarray, block: BlockWeights) -> np.ndarray:
    y = conv_unit_forward(x, block.expand)
    y = rephconv_forward(y, block.mixer)
    y = conv_unit_forward(y, block.pw)
    return conv_unit_forward(y, block.proj)


def deploy_block(block: BlockWeights) -> BlockWeights:
    return BlockWeights(
        expand=deploy_conv_unit(block.expand),
        mixer=merge_heterogeneous(block.mixer),
        pw=deploy_conv_unit(block.pw),
        proj=deploy_conv_unit(block.proj),
    )


@dataclass(frozen=True)
class RepHMSSpec:
    """Shape contract of one multi-stream aggregation module.

    The entry 1x1 maps ``in_ch`` to a hidden width equal to ``out_ch``,
    which is split into ``streams`` equal chunks.  Stream 1 passes through;
    each later stream adds the previous stream's final block output to its
    chunk and runs ``blocks_per_stream`` bottleneck blocks, every one of
    whose outputs is retained for the final concat.
    """

    in_ch: int
    out_ch: int
    streams: int
    blocks_per_stream: int
    kernel: int
    expansion: float = 2.0

    def __post_init__(self):
        if self.streams < 2:
            raise KernelError(f"need at least 2 streams, got {self.streams}")
        if self.blocks_per_stream < 1:
            raise KernelError(
                f"need at least 1 block per stream, got {self.blocks_per_stream}"
            )
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise KernelError(f"mixer kernel must be odd and >= 3, got {self.kernel}")
        if self.out_ch % self.streams != 0:
            raise ShapeError(
                f"hidden width {self.out_ch} not divisible into {self.streams} streams"
            )
        if self.expansion <= 0:
            raise KernelError(f"expansion must be positive, got {self.expansion}")

    @property
    def hidden(self) -> int:
        return self.out_ch

    @property
    def stream_width(self) -> int:
        return self.out_ch // self.streams

    @property
    def expanded_width(self) -> int:
        ec = int(round(self.stream_width * self.expansion))
        if ec < 1:
            raise ShapeError(f"expansion {self.expansion} collapses the block width")
        return ec


def rephms_concat_width(spec: RepHMSSpec) -> int:
    """Channel count entering the exit conv: the passthrough chunk plus one
    retained output per block of every active stream."""
    n, m = spec.streams, spec.blocks_per_stream
    return spec.stream_width * (1 + (n - 1) * m)


def rephms_layout(spec: RepHMSSpec) -> list[ConvUnitSpec | MixerSpec]:
    """Every weighted slot inside the module, in evaluation order.

    This single list drives weight initialization, binding, and parameter
    accounting, so they cannot drift apart.
    """
    cw = spec.stream_width
    ec = spec.expanded_width
    slots: list[ConvUnitSpec | MixerSpec] = [
        ConvUnitSpec("entry", spec.in_ch, spec.hidden, 1)
    ]
    for s in range(2, spec.streams + 1):
        for b in range(1, spec.blocks_per_stream + 1):
            base = f"s{s}.b{b}"
            slots.append(ConvUnitSpec(f"{base}.expand", cw, ec, 1))
            slots.append(MixerSpec(f"{base}.mixer", RepHConvSpec(ec, spec.kernel)))
            slots.append(ConvUnitSpec(f"{base}.pw", ec, ec, 1))
            slots.append(ConvUnitSpec(f"{base}.proj", ec, cw, 1, act=False))
    slots.append(ConvUnitSpec("exit", rephms_concat_width(spec), spec.out_ch, 1))
    return slots


@dataclass
class RepHMSWeights:
    """Weights of one aggregation module.  ``streams[i]`` holds the blocks
    of stream ``i + 2`` (stream 1 has none)."""

    spec: RepHMSSpec
    entry: ConvUnit
    streams: list[list[BlockWeights]]
    exit: ConvUnit

    def __post_init__(self):
        n, m = self.spec.streams, self.spec.blocks_per_stream
        if len(self.streams) != n - 1 or any(len(s) != m for s in self.streams):
            raise ShapeError(
                f"expected {n - 1} streams of {m} blocks, got "
                f"{[len(s) for s in self.streams]}"
            )
        if self.entry.kernel.out_channels != self.spec.hidden:
            raise ShapeError("entry conv must produce the hidden width")
        want = rephms_concat_width(self.spec)
        if self.exit.kernel.in_channels != want:
            raise ShapeError(
                f"exit conv consumes {self.exit.kernel.in_channels} channels "
                f"but the concat produces {want}"
            )

    @property
    def form(self) -> str:
        return "deployed" if self.entry.bn is None else "training"


def rephms_forward(x: np.ndarray, weights: RepHMSWeights) -> np.ndarray:
    """Entry conv, split, cascaded streams with every block output retained,
    concat, exit conv."""
    spec = weights.spec
    y = conv_unit_forward(x, weights.entry)
    chunks = split_channels(y, spec.streams)
    retained = [chunks[0]]
    carry = None
    for chunk, blocks in zip(chunks[1:], weights.streams):
        h = chunk if carry is None else chunk + carry
        for block in blocks:
            h = block_forward(h, block)
            retained.append(h)
        carry = h
    return conv_unit_forward(concat_channels(retained), weights.exit)


def deploy_rephms(weights: RepHMSWeights) -> RepHMSWeights:
    if weights.form == "deployed":
        raise StateError("module is already in deployed form")
    return RepHMSWeights(
        spec=weights.spec,
        entry=deploy_conv_unit(weights.entry),
        streams=[[deploy_block(b) for b in s] for s in weights.streams],
        exit=deploy_conv_unit(weights.exit),
    )


def rephms_from_units(spec: RepHMSSpec, units: dict) -> RepHMSWeights:
    """Assemble structured weights from a {slot path: ConvUnit | mixer}
    mapping, e.g. one produced by binding a flat weight store against
    :func:`rephms_layout`."""
    streams = []
    for s in range(2, spec.streams + 1):
        blocks = []
        for b in range(1, spec.blocks_per_stream + 1):
            base = f"s{s}.b{b}"
            blocks.append(
                BlockWeights(
                    expand=units[f"{base}.expand"],
                    mixer=units[f"{base}.mixer"],
                    pw=units[f"{base}.pw"],
                    proj=units[f"{base}.proj"],
                )
            )
        streams.append(blocks)
    return RepHMSWeights(
        spec=spec, entry=units["entry"], streams=streams, exit=units["exit"]
    )


# ---------------------------------------------------------------------------
# cross-resolution fusion nodes


@dataclass
class SAFWeights:
    """Weights of a shallow fusion node: a single 1x1 channel-control conv
    applied to the upsampled coarser backbone level.  Top-level nodes have
    no coarser input and therefore no conv."""

    ctrl: ConvUnit | None = None


@dataclass
class AAFWeights:
    """Weights of a deep fusion node: a 3x3/stride-2 conv for the finer
    refined level and a 1x1 control conv for the upsampled coarser refined
    level.  Boundary nodes drop the corresponding conv."""

    down: ConvUnit | None = None
    ctrl: ConvUnit | None = None


def saf_output_channels(
    below_ch: int | None, same_ch: int, above_ch: int | None, above_refined_ch: int | None
) -> int:
    """Concat width produced by :func:`saf_fuse` (control conv emits half
    the same-level width)."""
    total = same_ch
    if below_ch is not None:
        total += below_ch
    if above_ch is not None:
        total += same_ch // 2
    if above_refined_ch is not None:
        total += above_refined_ch
    return total


def saf_layout(same_ch: int, above_ch: int | None) -> list[ConvUnitSpec]:
    """Weighted slots of a shallow fusion node."""
    if above_ch is None:
        return []
    return [ConvUnitSpec("ctrl", above_ch, same_ch // 2, 1)]


def aaf_layout(width: int, has_below: bool, has_above: bool) -> list[ConvUnitSpec]:
    """Weighted slots of a deep fusion node."""
    slots = []
    if has_below:
        slots.append(ConvUnitSpec("down", width, width, 3, stride=2))
    if has_above:
        slots.append(ConvUnitSpec("ctrl", width, width, 1))
    return slots


def _expect_double(name: str, x: np.ndarray, target_hw: tuple[int, int]) -> None:
    if (x.shape[2], x.shape[3]) != (2 * target_hw[0], 2 * target_hw[1]):
        raise ShapeError(
            f"{name} input has spatial dims {x.shape[2:]} but must be exactly "
            f"twice the target {target_hw}"
        )


def _expect_half(name: str, x: np.ndarray, target_hw: tuple[int, int]) -> None:
    if (2 * x.shape[2], 2 * x.shape[3]) != target_hw:
        raise ShapeError(
            f"{name} input has spatial dims {x.shape[2:]} but must be exactly "
            f"half the target {target_hw}"
        )


def saf_fuse(
    below: np.ndarray | None,
    same: np.ndarray,
    above: np.ndarray | None,
    above_refined: np.ndarray | None,
    weights: SAFWeights,
) -> np.ndarray:
    """Shallow cross-resolution fusion.

    Concatenates, at the resolution of ``same``:

    * the finer backbone level, average-pooled then activated,
    * the same-level backbone feature untouched,
    * the coarser backbone level, upsampled, channel-controlled (1x1 conv
      to half the same-level width) and activated,
    * the coarser refined feature, upsampled as-is.

    Boundary levels pass ``None`` for inputs that do not exist; the concat
    simply shrinks.
    """
    target = (same.shape[2], same.shape[3])
    parts = []
    if below is not None:
        _expect_double("finer backbone", below, target)
        parts.append(silu(avgpool2d(below)))
    parts.append(same)
    if above is not None:
        if weights.ctrl is None:
            raise StateError("coarser input given but node has no control conv")
        _expect_half("coarser backbone", above, target)
        parts.append(conv_unit_forward(upsample2x(above), weights.ctrl))
    if above_refined is not None:
        _expect_half("coarser refined", above_refined, target)
        parts.append(upsample2x(above_refined))
    return concat_channels(parts)


def aaf_fuse(
    below_refined: np.ndarray | None,
    below_deep: np.ndarray | None,
    same_refined: np.ndarray,
    above_refined: np.ndarray | None,
    weights: AAFWeights,
) -> np.ndarray:
    """Deep cross-resolution fusion.

    Concatenates, at the resolution of ``same_refined``:

    * the finer refined level brought down by a 3x3/stride-2 conv, activated,
    * the finer deep-pathway output, average-pooled then activated,
    * the same-level refined feature untouched,
    * the coarser refined level, upsampled, 1x1-controlled and activated.

    All contributions carry the same channel width, so attention-style
    weighting downstream sees equal-sized operands; a width mismatch is a
    wiring bug and raises.
    """
    target = (same_refined.shape[2], same_refined.shape[3])
    width = same_refined.shape[1]
    parts = []
    if below_refined is not None:
        if weights.down is None:
            raise StateError("finer refined input given but node has no down conv")
        _expect_double("finer refined", below_refined, target)
        parts.append(conv_unit_forward(below_refined, weights.down))
    if below_deep is not None:
        _expect_double("finer deep", below_deep, target)
        parts.append(silu(avgpool2d(below_deep)))
    parts.append(same_refined)
    if above_refined is not None:
        if weights.ctrl is None:
            raise StateError("coarser refined input given but node has no control conv")
        _expect_half("coarser refined", above_refined, target)
        parts.append(conv_unit_forward(upsample2x(above_refined), weights.ctrl))
    for i, p in enumerate(parts):
        if p.shape[1] != width:
            raise ShapeError(
                f"deep fusion expects equal channel widths, but contribution "
                f"{i} has {p.shape[1]} channels instead of {width}"
            )
    return concat_channels(parts)


# ---------------------------------------------------------------------------
# random builders (tests, equivalence sweeps)


def random_conv_unit(spec: ConvUnitSpec, rng: np.random.Generator) -> ConvUnit:
    """Sample a training-form unit: fan-in-scaled weights, mildly random BN."""
    fan_in = (spec.in_ch // spec.groups) * spec.kernel * spec.kernel
    w = (rng.standard_normal((spec.out_ch, spec.in_ch // spec.groups, spec.kernel, spec.kernel))
         * np.sqrt(2.0 / fan_in)).astype(np.float32)
    bn = BNParams(
        mean=rng.normal(0.0, 0.2, spec.out_ch).astype(np.float32),
        var=rng.uniform(0.5, 1.5, spec.out_ch).astype(np.float32),
        gamma=rng.uniform(0.5, 1.5, spec.out_ch).astype(np.float32),
        beta=rng.normal(0.0, 0.2, spec.out_ch).astype(np.float32),
    )
    kernel = ConvKernel(weights=w, stride=spec.stride, groups=spec.groups)
    return ConvUnit(kernel=kernel, bn=bn, act=spec.act)


def random_rephms(spec: RepHMSSpec, rng: np.random.Generator) -> RepHMSWeights:
    """Sample a full training-form aggregation module."""
    from .reparam import random_rephconv

    units: dict = {}
    for slot in rephms_layout(spec):
        if isinstance(slot, MixerSpec):
            units[slot.path] = random_rephconv(slot.spec, rng)
        else:
            units[slot.path] = random_conv_unit(slot, rng)
    return rephms_from_units(spec, units)
