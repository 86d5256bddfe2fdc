"""Structural re-parameterization of multi-branch depthwise convolutions.

A training-form unit runs several parallel depthwise convolutions of
decreasing odd kernel size (k, k-2, ..., 3), each followed by its own batch
norm, and sums the results.  Because conv and inference-BN are both linear,
the whole bundle collapses at deployment into a single depthwise conv of the
largest kernel size:

* fold each branch's BN into its conv weights/bias,
* zero-pad every smaller kernel to the main size (which keeps the output
  map identical as long as the conv padding grows by the same amount),
* sum weights and biases across branches.

The functions here implement those three steps plus a self-contained
numerical equivalence check used by tests and the command-line tool.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError, ShapeError, StateError
from .tensor import BNParams, ConvKernel, batchnorm_infer, conv2d_fast

__all__ = [
    "RepHConvSpec",
    "RepHConvWeights",
    "EquivalenceReport",
    "fuse_conv_bn",
    "pad_kernel",
    "merge_heterogeneous",
    "rephconv_forward",
    "random_rephconv",
    "verify_equivalence",
]


def branch_sizes(main_kernel: int) -> tuple[int, ...]:
    """Side-branch kernel sizes for a given main kernel: every smaller odd
    size down to 3.  A 3x3 main kernel has no side branches."""
    if main_kernel % 2 == 0 or main_kernel < 3:
        raise KernelError(f"main kernel must be odd and >= 3, got {main_kernel}")
    return tuple(range(main_kernel - 2, 2, -2))


@dataclass(frozen=True)
class RepHConvSpec:
    """Shape contract of one heterogeneous-kernel depthwise unit."""

    channels: int
    main_kernel: int
    branch_kernels: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        expected = branch_sizes(self.main_kernel)
        if self.branch_kernels is None:
            object.__setattr__(self, "branch_kernels", expected)
        elif tuple(self.branch_kernels) != expected:
            raise KernelError(
                f"branch kernels for main size {self.main_kernel} must be "
                f"{list(expected)}, got {list(self.branch_kernels)}"
            )
        if self.channels < 1:
            raise KernelError(f"channels must be >= 1, got {self.channels}")

    @property
    def all_kernels(self) -> tuple[int, ...]:
        return (self.main_kernel, *self.branch_kernels)


@dataclass
class RepHConvWeights:
    """Parameters of one unit, in exactly one of two forms.

    Training form: ``branches`` holds one (depthwise ConvKernel, BNParams)
    pair per kernel size, largest first.  Deployed form: ``fused`` holds a
    single bias-carrying depthwise ConvKernel of the main size and no BN.
    """

    spec: RepHConvSpec
    branches: list[tuple[ConvKernel, BNParams]] | None = None
    fused: ConvKernel | None = None

    def __post_init__(self):
        if (self.branches is None) == (self.fused is None):
            raise StateError("exactly one of branches/fused must be set")
        c = self.spec.channels
        if self.branches is not None:
            got = tuple(k.kernel_size for k, _ in self.branches)
            if got != self.spec.all_kernels:
                raise KernelError(
                    f"branch kernel sizes {list(got)} do not match spec "
                    f"{list(self.spec.all_kernels)}"
                )
            for kernel, bn in self.branches:
                _check_depthwise(kernel, c)
                if bn.channels != c:
                    raise ShapeError(
                        f"branch BN has {bn.channels} channels, expected {c}"
                    )
        else:
            _check_depthwise(self.fused, c)
            if self.fused.kernel_size != self.spec.main_kernel:
                raise KernelError(
                    f"fused kernel size {self.fused.kernel_size} != main "
                    f"{self.spec.main_kernel}"
                )

    @property
    def form(self) -> str:
        return "training" if self.branches is not None else "deployed"

    def param_count(self) -> int:
        """Learnable parameter count (conv weights + bias, BN gamma/beta)."""
        if self.branches is not None:
            return sum(
                k.weights.size + 2 * bn.channels for k, bn in self.branches
            )
        return self.fused.weights.size + self.fused.bias.size


def _check_depthwise(kernel: ConvKernel, channels: int) -> None:
    if kernel.groups != channels or kernel.out_channels != channels or kernel.weights.shape[1] != 1:
        raise KernelError(
            f"expected a depthwise conv over {channels} channels, got weights "
            f"{kernel.weights.shape} with groups={kernel.groups}"
        )
    if kernel.stride != 1:
        raise KernelError("re-parameterized units are stride 1")


def fuse_conv_bn(kernel: ConvKernel, bn: BNParams) -> ConvKernel:
    """Fold an inference BN into the preceding convolution.

    With ``s = gamma / sqrt(var + eps)`` per output channel, the returned
    kernel computes ``bn(conv(x))`` in a single conv:
    weights scale by ``s`` and the bias becomes ``(bias - mean) * s + beta``.
    Works for any conv (dense, grouped, depthwise), including one that
    already carries a bias.
    """
    if bn.channels != kernel.out_channels:
        raise ShapeError(
            f"BN has {bn.channels} channels but conv produces {kernel.out_channels}"
        )
    scale = (bn.gamma / np.sqrt(bn.var + np.float32(bn.eps))).astype(np.float32)
    weights = kernel.weights * scale[:, None, None, None]
    bias = (kernel.bias - bn.mean) * scale + bn.beta
    return ConvKernel(
        weights=weights,
        bias=bias.astype(np.float32),
        stride=kernel.stride,
        padding=kernel.padding,
        groups=kernel.groups,
    )


def pad_kernel(kernel: ConvKernel, target_size: int) -> ConvKernel:
    """Zero-pad a kernel spatially to a larger odd size.

    The conv padding grows by the same margin, so the returned kernel is a
    drop-in replacement producing the identical output map.
    """
    k = kernel.kernel_size
    if target_size % 2 == 0:
        raise KernelError(f"target kernel size must be odd, got {target_size}")
    if target_size < k:
        raise KernelError(f"cannot pad kernel {k} down to {target_size}")
    margin = (target_size - k) // 2
    if margin == 0:
        return kernel
    weights = np.pad(kernel.weights, ((0, 0), (0, 0), (margin, margin), (margin, margin)))
    return ConvKernel(
        weights=weights,
        bias=kernel.bias.copy(),
        stride=kernel.stride,
        padding=kernel.padding + margin,
        groups=kernel.groups,
    )


def merge_heterogeneous(weights: RepHConvWeights) -> RepHConvWeights:
    """Collapse a training-form unit into its single deployed conv.

    Each branch is BN-folded first, then zero-padded to the main kernel
    size, then weights and biases are summed.  Merging an already-deployed
    unit is an error rather than a no-op, so double conversion bugs surface
    immediately.
    """
    if weights.form == "deployed":
        raise StateError("unit is already in deployed form; refusing to merge again")
    spec = weights.spec
    main_k = spec.main_kernel
    acc_w = np.zeros((spec.channels, 1, main_k, main_k), dtype=np.float32)
    acc_b = np.zeros(spec.channels, dtype=np.float32)
    for kernel, bn in weights.branches:
        folded = pad_kernel(fuse_conv_bn(kernel, bn), main_k)
        acc_w += folded.weights
        acc_b += folded.bias
    fused = ConvKernel(
        weights=acc_w,
        bias=acc_b,
        stride=1,
        padding=(main_k - 1) // 2,
        groups=spec.channels,
    )
    return RepHConvWeights(spec=spec, fused=fused)


def rephconv_forward(x: np.ndarray, weights: RepHConvWeights) -> np.ndarray:
    """Run one unit in whichever form it is in.

    Training form sums the BN-ed branch outputs in declaration order
    (largest kernel first); deployed form is a single conv.
    """
    if weights.form == "deployed":
        return conv2d_fast(x, weights.fused)
    out = None
    for kernel, bn in weights.branches:
        y = batchnorm_infer(conv2d_fast(x, kernel), bn)
        out = y if out is None else out + y
    return out


def random_rephconv(spec: RepHConvSpec, rng: np.random.Generator) -> RepHConvWeights:
    """Sample a plausible training-form unit for testing.

    Branch weights are standard normal scaled by 0.5/k, which keeps each
    branch's response near unit variance the way trained depthwise filters
    do; BN statistics are drawn in well-conditioned ranges.  Keeping
    activations at this scale matters: the two evaluation orders disagree
    by a couple of float32 ulps of the largest activation, so an inflated
    draw would measure magnitude rather than arithmetic.
    """
    c = spec.channels
    branches = []
    for k in spec.all_kernels:
        w = (rng.standard_normal((c, 1, k, k)) * (0.5 / k)).astype(np.float32)
        kernel = ConvKernel(weights=w, stride=1, groups=c)
        bn = BNParams(
            mean=rng.normal(0.0, 0.3, c).astype(np.float32),
            var=rng.uniform(0.5, 1.5, c).astype(np.float32),
            gamma=rng.uniform(0.5, 1.5, c).astype(np.float32),
            beta=rng.normal(0.0, 0.3, c).astype(np.float32),
        )
        branches.append((kernel, bn))
    return RepHConvWeights(spec=spec, branches=branches)


@dataclass
class EquivalenceReport:
    """Outcome of a training-vs-deployed numerical comparison."""

    spec: RepHConvSpec
    trials: int
    tolerance: float
    max_abs_error: float
    mean_abs_error: float
    training_seconds: float
    deployed_seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_error <= self.tolerance)

    def to_record(self) -> dict:
        return {
            "channels": self.spec.channels,
            "main_kernel": self.spec.main_kernel,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_abs_error": self.max_abs_error,
            "mean_abs_error": self.mean_abs_error,
            "training_seconds": self.training_seconds,
            "deployed_seconds": self.deployed_seconds,
            "passed": self.passed,
        }

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"unit c={self.spec.channels} k={self.spec.main_kernel} "
            f"({'+'.join(str(k) for k in self.spec.all_kernels)}): "
            f"max_abs={self.max_abs_error:.3e} mean_abs={self.mean_abs_error:.3e} "
            f"tol={self.tolerance:.1e} "
            f"t_train={self.training_seconds:.3f}s t_deploy={self.deployed_seconds:.3f}s "
            f"[{status}]"
        )


def verify_equivalence(
    spec: RepHConvSpec,
    trials: int = 100,
    tolerance: float = 1e-4,
    seed: int = 0,
    input_size: int = 20,
) -> EquivalenceReport:
    """Empirically check that merging preserves the unit's function.

    Each trial samples fresh weights, merges them, and runs both forms on a
    standard-normal input of the given spatial size, accumulating the worst
    absolute output difference.  Wall-clock per form is recorded as a side
    effect (the deployed form should never be slower).
    """
    rng = np.random.default_rng(seed)
    max_abs = 0.0
    mean_abs = 0.0
    t_train = 0.0
    t_deploy = 0.0
    for _ in range(trials):
        weights = random_rephconv(spec, rng)
        deployed = merge_heterogeneous(weights)
        x = rng.standard_normal((1, spec.channels, input_size, input_size)).astype(
            np.float32
        )
        t0 = time.perf_counter()
        y_train = rephconv_forward(x, weights)
        t1 = time.perf_counter()
        y_deploy = rephconv_forward(x, deployed)
        t2 = time.perf_counter()
        t_train += t1 - t0
        t_deploy += t2 - t1
        diff = np.abs(y_train.astype(np.float64) - y_deploy.astype(np.float64))
        max_abs = max(max_abs, float(diff.max()))
        mean_abs += float(diff.mean())
    return EquivalenceReport(
        spec=spec,
        trials=trials,
        tolerance=tolerance,
        max_abs_error=max_abs,
        mean_abs_error=mean_abs / max(trials, 1),
        training_seconds=t_train,
        deployed_seconds=t_deploy,
    )
