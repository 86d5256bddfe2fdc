"""Whole-model graph: assembly from a configuration, shape inference,
parameter/FLOP bookkeeping, structural validation, and export.

A graph is an ordered set of typed nodes (insertion order is topological by
construction).  Primitive kinds (conv, bn, silu, pool, upsample, concat,
split, add) carry their own semantics; composite kinds (rephms, saf, aaf)
encapsulate a fusion node or aggregation module whose internal weighted
slots are enumerated by the layout helpers in :mod:`mhaf.blocks`, so weight
naming, initialization and bookkeeping all derive from one description.

Node naming is stable and positional (``backbone.p3``, ``neck.p4.shallow``,
``head.p5``), which weight stores rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .blocks import (
    ConvUnitSpec,
    MixerSpec,
    RepHMSSpec,
    aaf_layout,
    rephms_layout,
    saf_layout,
    saf_output_channels,
)
from .config import ModelSpec, spec_hash
from .errors import GraphError, ShapeError
from .ghfks import KernelPlan, default_plan
from .tensor import conv_output_size

__all__ = [
    "Node",
    "ModelGraph",
    "ParamEntry",
    "assemble",
    "shape_infer",
    "count_params_flops",
    "Bookkeeping",
    "node_param_entries",
    "graph_param_entries",
    "export_graph",
    "validate_model",
    "Check",
]

KINDS = frozenset(
    {
        "input",
        "conv",
        "bn",
        "silu",
        "pool",
        "upsample",
        "concat",
        "split",
        "add",
        "rephms",
        "saf",
        "aaf",
        "head",
    }
)

BACKBONE_LEVELS = ("p2", "p3", "p4", "p5")
NECK_LEVELS = ("p3", "p4", "p5")
HEAD_STRIDES = {"p3": 8, "p4": 16, "p5": 32}


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    inputs: tuple[str, ...] = ()
    attrs: dict = field(default_factory=dict)


class ModelGraph:
    """Ordered DAG of named nodes.  ``add`` enforces that inputs already
    exist, so insertion order doubles as a topological order."""

    def __init__(self, form: str = "training", meta: dict | None = None):
        self.nodes: dict[str, Node] = {}
        self.outputs: tuple[str, ...] = ()
        self.form = form
        self.meta = dict(meta or {})

    def add(self, name: str, kind: str, inputs: tuple[str, ...] = (), **attrs) -> Node:
        if kind not in KINDS:
            raise GraphError(f"unknown node kind '{kind}'")
        if name in self.nodes:
            raise GraphError(f"duplicate node name '{name}'")
        for inp in inputs:
            if inp not in self.nodes:
                raise GraphError(f"node '{name}' references unknown input '{inp}'")
        node = Node(name=name, kind=kind, inputs=tuple(inputs), attrs=attrs)
        self.nodes[name] = node
        return node

    def node(self, name: str) -> Node:
        try:
            return self.nodes[name]
        except KeyError:
            raise GraphError(f"no node named '{name}'") from None

    def __iter__(self):
        return iter(self.nodes.values())

    def __len__(self):
        return len(self.nodes)

    def edges(self) -> list[tuple[str, str]]:
        return [(src, node.name) for node in self for src in node.inputs]


# ---------------------------------------------------------------------------
# assembly


def _rephms_spec(node: Node) -> RepHMSSpec:
    a = node.attrs
    return RepHMSSpec(
        in_ch=a["in_ch"],
        out_ch=a["out_ch"],
        streams=a["streams"],
        blocks_per_stream=a["blocks"],
        kernel=a["kernel"],
        expansion=a["expansion"],
    )


def _add_conv_bn_act(graph, base, src, in_ch, out_ch, kernel, stride):
    graph.add(
        f"{base}.conv", "conv", (src,),
        in_ch=in_ch, out_ch=out_ch, kernel=kernel, stride=stride, groups=1, bias=False,
    )
    graph.add(f"{base}.bn", "bn", (f"{base}.conv",), channels=out_ch)
    graph.add(f"{base}.act", "silu", (f"{base}.bn",))
    return f"{base}.act"


def assemble(spec: ModelSpec, plan: KernelPlan | None = None) -> ModelGraph:
    """Build the training-form detection backbone+neck graph.

    Structure: a two-conv stride-4 stem; four backbone stages (P2..P5), each
    a stride-2 downsample followed by an aggregation module; a first
    (shallow) fusion pathway running coarse-to-fine over P5..P3; a second
    (deep) fusion pathway running fine-to-coarse over P3..P5; and one head
    stub per neck level at strides 8/16/32.

    The shallow fusion at level n consumes backbone levels n-1, n, n+1 plus
    the already-refined level n+1; the deep fusion at level n consumes
    refined levels n-1, n, n+1 plus the deep-pathway output at n-1 --
    missing neighbours at the pyramid boundaries simply drop out of the
    concat (P5 shallow keeps 2 terms, P3 deep 2, P5 deep 3).
    """
    plan = plan or default_plan()
    cs = spec.scaled_stage_channels
    w = spec.scaled_neck_channels
    graph = ModelGraph(
        form="training",
        meta={
            "scale": spec.scale,
            "input_size": spec.input_size,
            "spec_hash": spec_hash(spec),
            "spec": spec,
            "plan": plan,
        },
    )

    graph.add("images", "input", channels=3, divisor=32)

    stem_ch = max(8, cs[0] // 2)
    prev = _add_conv_bn_act(graph, "stem.1", "images", 3, stem_ch, 3, 2)
    prev = _add_conv_bn_act(graph, "stem.2", prev, stem_ch, cs[0], 3, 2)

    def add_rephms(name, src, in_ch, out_ch, streams, blocks, kernel):
        graph.add(
            name, "rephms", (src,),
            in_ch=in_ch, out_ch=out_ch, streams=streams, blocks=blocks,
            kernel=kernel, expansion=spec.expansion,
        )
        _rephms_spec(graph.node(name))  # surface bad stream splits right here
        return name

    for i, level in enumerate(BACKBONE_LEVELS):
        if level != "p2":
            prev = _add_conv_bn_act(
                graph, f"backbone.{level}.down", prev, cs[i - 1], cs[i], 3, 2
            )
        prev = add_rephms(
            f"backbone.{level}", prev, cs[i], cs[i],
            spec.backbone_streams, spec.scaled_backbone_blocks,
            plan.backbone_kernel(level),
        )

    bb = {lv: f"backbone.{lv}" for lv in BACKBONE_LEVELS}

    # first fusion pathway (shallow), coarsest level first
    saf_in: dict[str, dict] = {
        "p5": dict(below="p4", same="p5", above=None, refined=None),
        "p4": dict(below="p3", same="p4", above="p5", refined="neck.p5.shallow"),
        "p3": dict(below="p2", same="p3", above="p4", refined="neck.p4.shallow"),
    }
    ch = dict(zip(BACKBONE_LEVELS, cs))
    for level in ("p5", "p4", "p3"):
        cfg = saf_in[level]
        inputs, roles = [], []
        below_ch = above_ch = refined_ch = None
        if cfg["below"]:
            inputs.append(bb[cfg["below"]])
            roles.append("below")
            below_ch = ch[cfg["below"]]
        inputs.append(bb[cfg["same"]])
        roles.append("same")
        same_ch = ch[cfg["same"]]
        if cfg["above"]:
            inputs.append(bb[cfg["above"]])
            roles.append("above")
            above_ch = ch[cfg["above"]]
        if cfg["refined"]:
            inputs.append(cfg["refined"])
            roles.append("above_refined")
            refined_ch = w
        out_ch = saf_output_channels(below_ch, same_ch, above_ch, refined_ch)
        fuse = f"neck.{level}.shallow.fuse"
        graph.add(
            fuse, "saf", tuple(inputs),
            roles=tuple(roles), below_ch=below_ch, same_ch=same_ch,
            above_ch=above_ch, refined_ch=refined_ch, out_ch=out_ch,
        )
        add_rephms(
            f"neck.{level}.shallow", fuse, out_ch, w,
            spec.neck_streams, spec.scaled_neck_blocks,
            plan.neck_kernel(level, "shallow"),
        )

    # second fusion pathway (deep), finest level first
    aaf_in = {
        "p3": dict(below_refined=None, below_deep=None,
                   same="neck.p3.shallow", above="neck.p4.shallow"),
        "p4": dict(below_refined="neck.p3.shallow", below_deep="neck.p3.deep",
                   same="neck.p4.shallow", above="neck.p5.shallow"),
        "p5": dict(below_refined="neck.p4.shallow", below_deep="neck.p4.deep",
                   same="neck.p5.shallow", above=None),
    }
    for level in NECK_LEVELS:
        cfg = aaf_in[level]
        inputs, roles = [], []
        for role, key in (
            ("below_refined", "below_refined"),
            ("below_deep", "below_deep"),
            ("same", "same"),
            ("above_refined", "above"),
        ):
            if cfg[key]:
                inputs.append(cfg[key])
                roles.append(role)
        out_ch = w * len(inputs)
        fuse = f"neck.{level}.deep.fuse"
        graph.add(
            fuse, "aaf", tuple(inputs),
            roles=tuple(roles), width=w,
            has_below=cfg["below_refined"] is not None,
            has_above=cfg["above"] is not None,
            out_ch=out_ch,
        )
        add_rephms(
            f"neck.{level}.deep", fuse, out_ch, w,
            spec.neck_streams, spec.scaled_neck_blocks,
            plan.neck_kernel(level, "deep"),
        )

    for level in NECK_LEVELS:
        graph.add(
            f"head.{level}", "head", (f"neck.{level}.deep",),
            level=level, stride=HEAD_STRIDES[level], channels=w,
        )
    graph.outputs = tuple(f"head.{lv}" for lv in NECK_LEVELS)
    return graph


# ---------------------------------------------------------------------------
# shape inference


def shape_infer(graph: ModelGraph, input_size=None) -> dict[str, tuple[int, int, int]]:
    """Propagate (channels, height, width) through every node, validating
    channel and resolution consistency along the way.

    ``input_size`` is an int (square) or (h, w) pair; defaults to the
    assembly-time input size when the graph carries one.
    """
    if input_size is None:
        input_size = graph.meta.get("input_size")
        if input_size is None:
            raise ShapeError("graph carries no default input size; pass one")
    hw = (input_size, input_size) if isinstance(input_size, int) else tuple(input_size)

    shapes: dict[str, tuple[int, int, int]] = {}

    def role_map(node):
        return dict(zip(node.attrs["roles"], node.inputs))

    for node in graph:
        ins = [shapes[i] for i in node.inputs]
        kind = node.kind
        if kind == "input":
            div = node.attrs.get("divisor", 1)
            if hw[0] % div or hw[1] % div:
                raise ShapeError(
                    f"input size {hw} must be divisible by {div} for this model"
                )
            shape = (node.attrs.get("channels", 3), hw[0], hw[1])
        elif kind == "conv":
            c, h, wd = ins[0]
            a = node.attrs
            if c != a["in_ch"]:
                raise ShapeError(
                    f"node '{node.name}' expects {a['in_ch']} channels, got {c}"
                )
            pad = (a["kernel"] - 1) // 2
            shape = (
                a["out_ch"],
                conv_output_size(h, a["kernel"], a["stride"], pad),
                conv_output_size(wd, a["kernel"], a["stride"], pad),
            )
        elif kind in ("bn", "silu", "head"):
            shape = ins[0]
            if kind == "bn" and shape[0] != node.attrs["channels"]:
                raise ShapeError(
                    f"node '{node.name}' normalizes {node.attrs['channels']} "
                    f"channels but receives {shape[0]}"
                )
            if kind == "head":
                want = node.attrs.get("stride")
                got = hw[0] // shape[1]
                if want is not None and got != want:
                    raise GraphError(
                        f"head '{node.name}' sits at stride {got}, expected {want}"
                    )
        elif kind == "pool":
            c, h, wd = ins[0]
            if h % 2 or wd % 2:
                raise ShapeError(
                    f"node '{node.name}' pools odd spatial dims {h}x{wd}"
                )
            shape = (c, h // 2, wd // 2)
        elif kind == "upsample":
            c, h, wd = ins[0]
            shape = (c, 2 * h, 2 * wd)
        elif kind == "concat":
            h, wd = ins[0][1:]
            for i, s in enumerate(ins):
                if s[1:] != (h, wd):
                    raise ShapeError(
                        f"node '{node.name}' concat input {i} has spatial dims "
                        f"{s[1:]}, expected {(h, wd)}"
                    )
            shape = (sum(s[0] for s in ins), h, wd)
        elif kind == "split":
            c, h, wd = ins[0]
            parts = node.attrs["parts"]
            if c % parts:
                raise ShapeError(
                    f"node '{node.name}' splits {c} channels into {parts} parts"
                )
            shape = (c // parts, h, wd)
        elif kind == "add":
            for i, s in enumerate(ins):
                if s != ins[0]:
                    raise ShapeError(
                        f"node '{node.name}' add input {i} has shape {s}, "
                        f"expected {ins[0]}"
                    )
            shape = ins[0]
        elif kind == "rephms":
            c, h, wd = ins[0]
            if c != node.attrs["in_ch"]:
                raise ShapeError(
                    f"node '{node.name}' expects {node.attrs['in_ch']} channels, got {c}"
                )
            shape = (node.attrs["out_ch"], h, wd)
        elif kind == "saf":
            rm = role_map(node)
            c_s, h, wd = shapes[rm["same"]]
            total = c_s
            if "below" in rm:
                c_b, h_b, w_b = shapes[rm["below"]]
                if (h_b, w_b) != (2 * h, 2 * wd):
                    raise ShapeError(
                        f"node '{node.name}': finer input is {h_b}x{w_b}, "
                        f"expected {2 * h}x{2 * wd}"
                    )
                total += c_b
            if "above" in rm:
                c_a, h_a, w_a = shapes[rm["above"]]
                if (2 * h_a, 2 * w_a) != (h, wd):
                    raise ShapeError(
                        f"node '{node.name}': coarser input is {h_a}x{w_a}, "
                        f"expected {h // 2}x{wd // 2}"
                    )
                total += c_s // 2
            if "above_refined" in rm:
                c_r, h_r, w_r = shapes[rm["above_refined"]]
                if (2 * h_r, 2 * w_r) != (h, wd):
                    raise ShapeError(
                        f"node '{node.name}': refined input is {h_r}x{w_r}, "
                        f"expected {h // 2}x{wd // 2}"
                    )
                total += c_r
            if total != node.attrs["out_ch"]:
                raise GraphError(
                    f"node '{node.name}' declares {node.attrs['out_ch']} output "
                    f"channels but its inputs produce {total}"
                )
            shape = (total, h, wd)
        elif kind == "aaf":
            rm = role_map(node)
            width = node.attrs["width"]
            c_s, h, wd = shapes[rm["same"]]
            if c_s != width:
                raise ShapeError(
                    f"node '{node.name}': same-level input has {c_s} channels, "
                    f"expected width {width}"
                )
            count = 1
            for role in ("below_refined", "below_deep"):
                if role in rm:
                    c_b, h_b, w_b = shapes[rm[role]]
                    if c_b != width or (h_b, w_b) != (2 * h, 2 * wd):
                        raise ShapeError(
                            f"node '{node.name}': {role} input is "
                            f"{c_b}x{h_b}x{w_b}, expected {width}x{2 * h}x{2 * wd}"
                        )
                    count += 1
            if "above_refined" in rm:
                c_a, h_a, w_a = shapes[rm["above_refined"]]
                if c_a != width or (2 * h_a, 2 * w_a) != (h, wd):
                    raise ShapeError(
                        f"node '{node.name}': coarser refined input is "
                        f"{c_a}x{h_a}x{w_a}, expected {width}x{h // 2}x{wd // 2}"
                    )
                count += 1
            total = width * count
            if total != node.attrs["out_ch"]:
                raise GraphError(
                    f"node '{node.name}' declares {node.attrs['out_ch']} output "
                    f"channels but its inputs produce {total}"
                )
            shape = (total, h, wd)
        else:
            raise GraphError(f"node '{node.name}' has uninferable kind '{kind}'")
        shapes[node.name] = shape
    return shapes


# ---------------------------------------------------------------------------
# weight entry enumeration


@dataclass(frozen=True)
class ParamEntry:
    """One named array in a weight store."""

    name: str
    shape: tuple[int, ...]
    kind: str  # conv_weight | conv_bias | bn_gamma | bn_beta | bn_mean | bn_var

    @property
    def learnable(self) -> bool:
        # BN running statistics are buffers, not parameters
        return self.kind not in ("bn_mean", "bn_var")

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


def _bn_entries(prefix: str, channels: int) -> list[ParamEntry]:
    return [
        ParamEntry(f"{prefix}.gamma", (channels,), "bn_gamma"),
        ParamEntry(f"{prefix}.beta", (channels,), "bn_beta"),
        ParamEntry(f"{prefix}.mean", (channels,), "bn_mean"),
        ParamEntry(f"{prefix}.var", (channels,), "bn_var"),
    ]


def _unit_entries(prefix: str, slot: ConvUnitSpec, form: str) -> list[ParamEntry]:
    wshape = (slot.out_ch, slot.in_ch // slot.groups, slot.kernel, slot.kernel)
    entries = [ParamEntry(f"{prefix}.conv.weight", wshape, "conv_weight")]
    if form == "deployed":
        entries.append(ParamEntry(f"{prefix}.conv.bias", (slot.out_ch,), "conv_bias"))
    else:
        entries.extend(_bn_entries(f"{prefix}.bn", slot.out_ch))
    return entries


def _mixer_entries(prefix: str, mixer: MixerSpec, form: str) -> list[ParamEntry]:
    spec = mixer.spec
    if form == "deployed":
        k = spec.main_kernel
        return [
            ParamEntry(f"{prefix}.fused.weight", (spec.channels, 1, k, k), "conv_weight"),
            ParamEntry(f"{prefix}.fused.bias", (spec.channels,), "conv_bias"),
        ]
    entries = []
    for k in spec.all_kernels:
        entries.append(
            ParamEntry(f"{prefix}.k{k}.conv.weight", (spec.channels, 1, k, k), "conv_weight")
        )
        entries.extend(_bn_entries(f"{prefix}.k{k}.bn", spec.channels))
    return entries


def node_slots(node: Node) -> list[ConvUnitSpec | MixerSpec]:
    """Weighted slots inside a composite node (empty for primitives)."""
    if node.kind == "rephms":
        return rephms_layout(_rephms_spec(node))
    if node.kind == "saf":
        return saf_layout(node.attrs["same_ch"], node.attrs["above_ch"])
    if node.kind == "aaf":
        return aaf_layout(
            node.attrs["width"], node.attrs["has_below"], node.attrs["has_above"]
        )
    return []


def node_param_entries(node: Node, form: str) -> list[ParamEntry]:
    """Every weight-store entry a node contributes, in deterministic order."""
    if node.kind == "conv":
        a = node.attrs
        wshape = (a["out_ch"], a["in_ch"] // a["groups"], a["kernel"], a["kernel"])
        entries = [ParamEntry(f"{node.name}.weight", wshape, "conv_weight")]
        if a.get("bias"):
            entries.append(ParamEntry(f"{node.name}.bias", (a["out_ch"],), "conv_bias"))
        return entries
    if node.kind == "bn":
        return _bn_entries(node.name, node.attrs["channels"])
    entries: list[ParamEntry] = []
    for slot in node_slots(node):
        prefix = f"{node.name}.{slot.path}"
        if isinstance(slot, MixerSpec):
            entries.extend(_mixer_entries(prefix, slot, form))
        else:
            entries.extend(_unit_entries(prefix, slot, form))
    return entries


def graph_param_entries(graph: ModelGraph) -> list[ParamEntry]:
    entries = []
    for node in graph:
        entries.extend(node_param_entries(node, graph.form))
    return entries


# ---------------------------------------------------------------------------
# bookkeeping


@dataclass
class Bookkeeping:
    """Learnable parameter and FLOP totals (FLOPs = 2 * conv MACs; batch
    norm, activations and resampling are not counted)."""

    params: int
    flops: int
    per_node: dict[str, tuple[int, int]]

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def mparams(self) -> float:
        return self.params / 1e6


def _node_macs(node: Node, form: str, shapes) -> int:
    if node.kind == "conv":
        a = node.attrs
        c, h, w = shapes[node.name]
        return a["out_ch"] * (a["in_ch"] // a["groups"]) * a["kernel"] ** 2 * h * w
    if node.kind in ("rephms", "saf", "aaf"):
        _, h, w = shapes[node.name]
        macs = 0
        for slot in node_slots(node):
            if isinstance(slot, MixerSpec):
                spec = slot.spec
                if form == "deployed":
                    macs += spec.channels * spec.main_kernel**2 * h * w
                else:
                    macs += sum(spec.channels * k**2 for k in spec.all_kernels) * h * w
            else:
                macs += slot.out_ch * (slot.in_ch // slot.groups) * slot.kernel**2 * h * w
        return macs
    return 0


def count_params_flops(graph: ModelGraph, input_size=None) -> Bookkeeping:
    """Learnable parameters and inference FLOPs of the graph as it stands
    (training form counts every branch; deployed form counts merged convs).
    """
    shapes = shape_infer(graph, input_size)
    per_node = {}
    total_p = 0
    total_f = 0
    for node in graph:
        params = sum(e.size for e in node_param_entries(node, graph.form) if e.learnable)
        flops = 2 * _node_macs(node, graph.form, shapes)
        per_node[node.name] = (params, flops)
        total_p += params
        total_f += flops
    return Bookkeeping(params=total_p, flops=total_f, per_node=per_node)


# ---------------------------------------------------------------------------
# export


def _node_label(node: Node) -> str:
    a = node.attrs
    if node.kind == "conv":
        detail = f" {a['kernel']}x{a['kernel']}/{a['stride']} {a['in_ch']}->{a['out_ch']}"
    elif node.kind == "rephms":
        detail = f" k{a['kernel']} n{a['streams']} m{a['blocks']} {a['in_ch']}->{a['out_ch']}"
    elif node.kind in ("saf", "aaf"):
        detail = f" x{len(node.inputs)} ->{a['out_ch']}"
    elif node.kind == "bn":
        detail = f" c{a['channels']}"
    elif node.kind == "head":
        detail = f" /{a['stride']}"
    else:
        detail = ""
    return f"{node.name}\\n{node.kind}{detail}"


def export_graph(graph: ModelGraph, fmt: str = "dot"):
    """Serialize the graph structure.

    ``dot`` returns Graphviz text (deterministic: re-export of the same
    graph is byte-identical).  ``records`` returns a list of flat dicts,
    one per node and one per edge, for line-oriented tooling.
    """
    if fmt == "dot":
        lines = [f'digraph "{graph.meta.get("scale", "model")}" {{', "  rankdir=TB;"]
        for node in graph:
            lines.append(f'  "{node.name}" [label="{_node_label(node)}"];')
        for src, dst in graph.edges():
            lines.append(f'  "{src}" -> "{dst}";')
        lines.append("}")
        return "\n".join(lines) + "\n"
    if fmt == "records":
        records = []
        for node in graph:
            rec = {"type": "node", "name": node.name, "kind": node.kind}
            for key, value in node.attrs.items():
                if isinstance(value, (int, float, str, bool, type(None))):
                    rec[key] = value
                elif isinstance(value, tuple):
                    rec[key] = list(value)
            records.append(rec)
        records.extend(
            {"type": "edge", "src": src, "dst": dst} for src, dst in graph.edges()
        )
        return records
    raise ValueError(f"unknown export format '{fmt}'")


# ---------------------------------------------------------------------------
# validation checklist


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def validate_model(spec: ModelSpec, plan: KernelPlan | None = None, input_size=None) -> list[Check]:
    """Run the standard structural checks on a configuration and return one
    pass/fail entry per check."""
    checks: list[Check] = []
    plan = plan or default_plan()

    def run(name, fn):
        try:
            detail = fn()
            checks.append(Check(name, True, detail or "ok"))
            return True
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            checks.append(Check(name, False, str(exc)))
            return False

    cs = spec.scaled_stage_channels
    run(
        "config",
        lambda: (
            f"scale={spec.scale} stages={list(cs)} neck={spec.scaled_neck_channels} "
            f"streams={spec.backbone_streams}/{spec.neck_streams} "
            f"blocks={spec.scaled_backbone_blocks}/{spec.scaled_neck_blocks}"
        ),
    )
    run("kernel-plan", lambda: (plan.validate(), "schedule holds")[1])

    graph_box = {}

    def build():
        graph_box["g"] = assemble(spec, plan)
        g = graph_box["g"]
        return f"{len(g)} nodes, {len(g.edges())} edges"

    if not run("graph-build", build):
        return checks
    graph = graph_box["g"]

    def shapes_check():
        shapes = shape_infer(graph, input_size)
        heads = {
            lv: shapes[f"head.{lv}"] for lv in NECK_LEVELS
        }
        return ", ".join(f"{lv}:{c}x{h}x{w}" for lv, (c, h, w) in heads.items())

    run("shapes-and-strides", shapes_check)

    def wiring_check():
        expect = {
            "neck.p5.shallow.fuse": 2,
            "neck.p4.shallow.fuse": 4,
            "neck.p3.shallow.fuse": 4,
            "neck.p3.deep.fuse": 2,
            "neck.p4.deep.fuse": 4,
            "neck.p5.deep.fuse": 3,
        }
        for name, arity in expect.items():
            got = len(graph.node(name).inputs)
            if got != arity:
                raise GraphError(f"{name} has {got} inputs, expected {arity}")
        p4 = graph.node("neck.p4.deep.fuse")
        rm = dict(zip(p4.attrs["roles"], p4.inputs))
        if rm["below_refined"] == rm["below_deep"]:
            raise GraphError(
                "deep fusion must draw its two finer-level terms from distinct nodes"
            )
        return "fusion arities 2/4/4 + 2/4/3, finer-level sources distinct"

    run("fusion-wiring", wiring_check)
    return checks
