"""The two-stream arousal network and its Grad-CAM introspection.

Visual stream: three valid 5x5 conv layers with 8, 12 and 16 filters, each
followed by ReLU and 2x2 max pooling, flattened to a feature vector (640
elements for 72x96 input).  Audio stream: the MFCC block passed through
unchanged.  Fusion: concatenation -> dense 64 + ReLU -> dense 2.

In classifier mode the two outputs are softmaxed into low/high arousal
probabilities.  In ranker mode the same network scores two segments and the
softmax of the logit difference gives the probability that the first segment
has higher arousal (a RankNet-style Siamese head with shared weights).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .audio import N_COEFFS
from .ingest import resize_bilinear
from .windows import Segment

CONV_FILTERS = (8, 12, 16)
KERNEL = 5
FUSED_UNITS = 64
N_OUTPUTS = 2
MIN_RESOLUTION = 24

MODALITIES = ("visual", "audio", "both")
MODES = ("classify", "rank")


@dataclass(eq=False)
class GradCamMap:
    heatmap: np.ndarray   # (h, w) in [0, 1], input resolution
    raw: np.ndarray       # pre-upsample map on the last conv grid
    target: int
    score: float


def conv_shape_chain(resolution: tuple[int, int]) -> list[tuple[int, int]]:
    """Spatial shapes after each conv and pool stage; raises if any collapses."""
    h, w = resolution
    chain = []
    for _ in CONV_FILTERS:
        h, w = h - (KERNEL - 1), w - (KERNEL - 1)
        if h < 1 or w < 1:
            raise ValueError(f"resolution {resolution} too small for three conv/pool stages")
        chain.append((h, w))
        h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ValueError(f"resolution {resolution} too small for three conv/pool stages")
        chain.append((h, w))
    return chain


def visual_feature_length(resolution: tuple[int, int]) -> int:
    h, w = conv_shape_chain(resolution)[-1]
    return CONV_FILTERS[-1] * h * w


class ArousalNet:
    """Two-stream network over frame stacks and MFCC blocks."""

    def __init__(
        self,
        n_frames: int,
        resolution: tuple[int, int],
        modality: str = "both",
        mode: str = "classify",
        seed: int | np.random.Generator = 0,
        audio_frames: int | None = None,
    ):
        if modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        self.n_frames = n_frames
        self.resolution = tuple(resolution)
        self.modality = modality
        self.mode = mode
        self.audio_frames = audio_frames if audio_frames is not None else n_frames

        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.visual_len = 0
        self.convs: list[nn.Conv2d] = []
        self.relus: list[nn.ReLU] = []
        self.pools: list[nn.MaxPool2x2] = []
        if modality != "audio":
            if min(self.resolution) < MIN_RESOLUTION:
                raise ValueError(f"resolution {resolution} below minimum {MIN_RESOLUTION}")
            self.visual_len = visual_feature_length(self.resolution)
            chans = (n_frames,) + CONV_FILTERS
            for cin, cout in zip(chans[:-1], chans[1:]):
                self.convs.append(nn.Conv2d(cin, cout, rng, kernel=KERNEL))
                self.relus.append(nn.ReLU())
                self.pools.append(nn.MaxPool2x2())
        self.mfcc_len = self.audio_frames * N_COEFFS if modality != "visual" else 0
        fuse_in = self.visual_len + self.mfcc_len
        self.fuse = nn.Dense(fuse_in, FUSED_UNITS, rng)
        self.fuse_relu = nn.ReLU()
        self.head = nn.Dense(FUSED_UNITS, N_OUTPUTS, rng)
        self._conv3_act: np.ndarray | None = None

    # -- parameters ---------------------------------------------------------

    def named_layers(self):
        layers = [(f"conv{i + 1}", c) for i, c in enumerate(self.convs)]
        layers += [("fuse", self.fuse), ("head", self.head)]
        return layers

    def parameters(self):
        out = []
        for lname, layer in self.named_layers():
            out += [(f"{lname}.{pname}", p, g) for pname, p, g in layer.params()]
        return out

    def param_count(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def param_count_formula(self) -> int:
        """Closed-form count: conv 25*Cin*Cout + Cout, dense Din*Dout + Dout."""
        total = 0
        if self.modality != "audio":
            chans = (self.n_frames,) + CONV_FILTERS
            for cin, cout in zip(chans[:-1], chans[1:]):
                total += KERNEL * KERNEL * cin * cout + cout
        fuse_in = self.visual_len + self.mfcc_len
        total += fuse_in * FUSED_UNITS + FUSED_UNITS
        total += FUSED_UNITS * N_OUTPUTS + N_OUTPUTS
        return total

    def zero_grad(self) -> None:
        for _, p, g in self.parameters():
            g[...] = 0.0

    def state_arrays(self):
        out = []
        for lname, layer in self.named_layers():
            out += [(f"{lname}.{pname}", p) for pname, p, _ in layer.params()]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.state_arrays():
            src = tensors[name]
            if src.shape != p.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {src.shape}, want {p.shape}")
            p[...] = src

    def clone_state(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.state_arrays()}

    # -- forward / backward -------------------------------------------------

    def _visual_forward(self, frames: np.ndarray | None, frames_u8: bool) -> np.ndarray | None:
        if self.modality == "audio":
            return None
        if frames is None:
            raise ValueError("visual stream requires frames")
        x = self.convs[0].forward_u8(frames) if frames_u8 else self.convs[0].forward(frames)
        x = self.pools[0].forward(self.relus[0].forward(x))
        x = self.pools[1].forward(self.relus[1].forward(self.convs[1].forward(x)))
        x = self.relus[2].forward(self.convs[2].forward(x))
        self._conv3_act = x
        x = self.pools[2].forward(x)
        return x.reshape(x.shape[0], -1)

    def logits(
        self,
        frames: np.ndarray | None = None,
        mfcc: np.ndarray | None = None,
        frames_u8: bool = False,
    ) -> np.ndarray:
        """Batched pre-softmax outputs (B, 2).

        ``frames``: (B, n, H, W) floats in [0, 1], or uint8 with frames_u8=True.
        ``mfcc``: (B, mfcc_len) flattened blocks.
        """
        feats = []
        vis = self._visual_forward(frames, frames_u8)
        batch = None
        if vis is not None:
            feats.append(vis)
            batch = vis.shape[0]
        if self.modality != "visual":
            if mfcc is None:
                raise ValueError("audio stream requires mfcc input")
            mfcc = np.asarray(mfcc, dtype=np.float64)
            if mfcc.ndim == 1:
                mfcc = mfcc[None]
            if mfcc.shape[1] != self.mfcc_len:
                raise ValueError(f"mfcc length {mfcc.shape[1]} != expected {self.mfcc_len}")
            if batch is not None and mfcc.shape[0] != batch:
                raise ValueError("frames and mfcc batch sizes differ")
            feats.append(mfcc)
        fused = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
        return self.head.forward(self.fuse_relu.forward(self.fuse.forward(fused)))

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients for the most recent ``logits`` call."""
        g = self.head.backward(dlogits)
        g = self.fuse.backward(self.fuse_relu.backward(g))
        if self.modality == "audio":
            return
        g_vis = g[:, :self.visual_len]
        b = g_vis.shape[0]
        h3, w3 = self._conv3_act.shape[2] // 2, self._conv3_act.shape[3] // 2
        g = self.pools[2].backward(g_vis.reshape(b, CONV_FILTERS[2], h3, w3))
        g = self.convs[2].backward(self.relus[2].backward(g))
        g = self.convs[1].backward(self.relus[1].backward(self.pools[1].backward(g)))
        g = self.pools[0].backward(g)
        self.convs[0].backward(self.relus[0].backward(g), need_input_grad=False)

    # -- segment-level API ----------------------------------------------------

    def _segment_inputs(self, segment: Segment):
        frames = segment.frames[None] if self.modality != "audio" else None
        mfcc = None
        if self.modality != "visual":
            if segment.mfcc is None:
                raise ValueError(f"segment {segment.session_id}@{segment.start} has no MFCC block")
            mfcc = segment.mfcc.flattened()[None]
        return frames, mfcc

    def forward_classify(self, segment: Segment) -> np.ndarray:
        """Probability 2-vector (low, high) for one segment."""
        if self.mode != "classify":
            raise ValueError("forward_classify requires classifier mode")
        frames, mfcc = self._segment_inputs(segment)
        return nn.softmax(self.logits(frames, mfcc))[0]

    def forward_rank(self, seg_a: Segment, seg_b: Segment) -> np.ndarray:
        """softmax(f(A) - f(B)); component 1 = probability A has higher arousal."""
        if self.mode != "rank":
            raise ValueError("forward_rank requires ranker mode")
        fa, ma = self._segment_inputs(seg_a)
        fb, mb = self._segment_inputs(seg_b)
        la = self.logits(fa, ma)[0]
        lb = self.logits(fb, mb)[0]
        return nn.softmax(la - lb)

    def predict_score(self, segment: Segment) -> float:
        """Scalar arousal score: P(high) for classifiers, f1 - f0 for rankers."""
        frames, mfcc = self._segment_inputs(segment)
        logit = self.logits(frames, mfcc)[0]
        if self.mode == "classify":
            return float(nn.softmax(logit)[1])
        return float(logit[1] - logit[0])

    def score_batch(self, frames: np.ndarray | None, mfcc: np.ndarray | None,
                    frames_u8: bool = False) -> np.ndarray:
        logit = self.logits(frames, mfcc, frames_u8=frames_u8)
        if self.mode == "classify":
            return nn.softmax(logit)[:, 1]
        return logit[:, 1] - logit[:, 0]

    # -- Grad-CAM -------------------------------------------------------------

    def grad_cam(self, segment: Segment, target: int = 1) -> GradCamMap:
        """Gradient-weighted activation map over the third conv layer.

        Filter weights are the spatial means of d(logit[target])/d(activation);
        the weighted activation sum is rectified, bilinearly upsampled to the
        input resolution, and scaled to [0, 1] when non-zero.
        """
        if self.modality == "audio":
            raise ValueError("grad_cam requires a visual stream")
        if target not in (0, 1):
            raise ValueError("target must be 0 or 1")
        frames, mfcc = self._segment_inputs(segment)
        logit = self.logits(frames, mfcc)[0]
        acts = self._conv3_act[0]
        dlogits = np.zeros((1, N_OUTPUTS))
        dlogits[0, target] = 1.0
        g = self.head.backward(dlogits)
        g = self.fuse.backward(self.fuse_relu.backward(g))
        g_vis = g[:, :self.visual_len]
        h3, w3 = acts.shape[1] // 2, acts.shape[2] // 2
        d_act = self.pools[2].backward(g_vis.reshape(1, CONV_FILTERS[2], h3, w3))[0]
        self.zero_grad()  # the probe backward above is not a training step

        alphas = d_act.mean(axis=(1, 2))
        raw = np.maximum((alphas[:, None, None] * acts).sum(axis=0), 0.0)
        heat = resize_bilinear(raw, self.resolution)
        heat = np.maximum(heat, 0.0)
        peak = heat.max()
        if peak > 0:
            heat = heat / peak
        if self.mode == "classify":
            score = float(nn.softmax(logit)[1])
        else:
            score = float(logit[1] - logit[0])
        return GradCamMap(heatmap=heat, raw=raw, target=target, score=score)


def build_model(
    n_frames: int,
    resolution: tuple[int, int],
    modality: str = "both",
    mode: str = "classify",
    seed: int | np.random.Generator = 0,
    audio_frames: int | None = None,
) -> ArousalNet:
    net = ArousalNet(n_frames, resolution, modality, mode, seed, audio_frames)
    assert net.param_count() == net.param_count_formula()
    return net


def classifier_loss(net: ArousalNet, segment: Segment, label: int,
                    accumulate_grads: bool = False) -> float:
    """NLL of one labeled segment; optionally run backward into the grad buffers."""
    frames, mfcc = net._segment_inputs(segment)
    logits = net.logits(frames, mfcc)
    loss, dlogits = nn.softmax_nll(logits[0], label)
    if accumulate_grads:
        net.backward(dlogits[None])
    return float(loss)


def ranker_loss(net: ArousalNet, seg_a: Segment, seg_b: Segment, label: int,
                accumulate_grads: bool = False) -> float:
    """NLL of softmax(f(A) - f(B)) against the preference label.

    The backward pass applies the shared-weight chain rule: the second
    branch is backpropagated from its cached forward, then the first branch
    is re-run to restore caches and backpropagated with the opposite sign.
    """
    fa, ma = net._segment_inputs(seg_a)
    fb, mb = net._segment_inputs(seg_b)
    la = net.logits(fa, ma)[0]
    lb = net.logits(fb, mb)[0]
    loss, ddiff = nn.softmax_nll(la - lb, label)
    if accumulate_grads:
        net.backward(-ddiff[None])       # branch B caches are current
        net.logits(fa, ma)
        net.backward(ddiff[None])
    return float(loss)


def gradient_check(net: ArousalNet, example: tuple, h: float = 1e-5,
                   min_samples: int = 200, seed: int = 0) -> float:
    """Finite-difference check of the full network against its backward pass.

    ``example`` is (segment, label) for classifiers and
    (segment_a, segment_b, label) for rankers.
    """
    if net.mode == "classify":
        segment, label = example
        loss_fn = lambda: classifier_loss(net, segment, label)  # noqa: E731
        net.zero_grad()
        classifier_loss(net, segment, label, accumulate_grads=True)
    else:
        seg_a, seg_b, label = example
        loss_fn = lambda: ranker_loss(net, seg_a, seg_b, label)  # noqa: E731
        net.zero_grad()
        ranker_loss(net, seg_a, seg_b, label, accumulate_grads=True)
    return nn.finite_diff_check(loss_fn, net.parameters(), h=h,
                                min_samples=min_samples, seed=seed)
