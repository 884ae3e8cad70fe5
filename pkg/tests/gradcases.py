"""Finite-difference cases: every differentiable op, each layer and each toy network."""
from __future__ import annotations

import numpy as np

from regen_stream.dsp import StftConfig
from regen_stream.losses import (Stage1LossConfig, compressed_spectral_loss, generator_adversarial_loss,
                                 generator_total_loss, hinge_discriminator_loss, local_snr_loss, mel_l1_loss,
                                 multires_loss, si_sdr_tensor, stage1_loss)
from regen_stream.models.deepfilter import deep_filter_tensor
from regen_stream.models.ssm import SelectiveSSM
from regen_stream.nn import autograd as ag
from regen_stream.nn.gradcheck import check_directional, check_gradients
from regen_stream.nn.layers import GRU, Conv1d, GroupedLinear, Linear, TimeFreqConv, weight_norm_effective
from regen_stream.nn.spectral import frames_tensor, istft_tensor, power_tensor, stft_tensor

from toys import SMALL_STFT, small_discriminator, small_generator, small_stage1

TOL = 1e-4


def _proj(rng, shape):
    """A fixed random projection turning any output into a scalar loss."""
    r = rng.standard_normal(shape)
    return lambda out: (out * r).sum()


def _away_from(rng, shape, points=(0.0,), margin=0.05):
    x = rng.standard_normal(shape)
    for p in points:
        near = np.abs(x - p) < margin
        x[near] = p + np.sign(x[near] - p + 1e-12) * margin
    return x


def _unary(op, domain="real"):
    def build(rng):
        if domain == "positive":
            x = rng.uniform(0.2, 2.0, (3, 4))
        elif domain == "kink":
            x = _away_from(rng, (3, 4))
        else:
            x = rng.standard_normal((3, 4))
        p = _proj(rng, x.shape)
        return (lambda x: p(op(x))), {"x": x}
    return build


def _binary(op, b_positive=False):
    def build(rng):
        a = rng.standard_normal((3, 4))
        b = rng.uniform(0.5, 2.0, (4,)) if b_positive else rng.standard_normal((4,))
        p = _proj(rng, (3, 4))
        return (lambda a, b: p(op(a, b))), {"a": a, "b": b}
    return build


def _shape_op(op, shape, out_shape):
    def build(rng):
        p = _proj(rng, out_shape)
        return (lambda x: p(op(x))), {"x": rng.standard_normal(shape)}
    return build


def _clip(rng):
    x = _away_from(rng, (3, 4), points=(-0.5, 0.5))
    p = _proj(rng, x.shape)
    return (lambda x: p(ag.clip(x, -0.5, 0.5))), {"x": x}


def _concat(rng):
    p = _proj(rng, (2, 7))
    return (lambda a, b: p(ag.concat([a, b], axis=1))), {"a": rng.standard_normal((2, 3)),
                                                          "b": rng.standard_normal((2, 4))}


def _stack(rng):
    p = _proj(rng, (2, 2, 3))
    return (lambda a, b: p(ag.stack([a, b], axis=1))), {"a": rng.standard_normal((2, 3)),
                                                         "b": rng.standard_normal((2, 3))}


def _fancy_index(rng):
    idx = np.array([0, 2, 2, 1])
    p = _proj(rng, (4, 4))
    return (lambda x: p(x[idx])), {"x": rng.standard_normal((3, 4))}


def _matmul(rng):
    p = _proj(rng, (3, 5))
    return (lambda a, b: p(a @ b)), {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 5))}


def _einsum(rng):
    p = _proj(rng, (2, 5, 3))
    return (lambda a, b: p(ag.einsum("bik,kjb->bji", a, b))), {"a": rng.standard_normal((2, 3, 4)),
                                                               "b": rng.standard_normal((4, 5, 2))}


def _unfold(rng):
    p = _proj(rng, (2, 4, 3))
    return (lambda x: p(ag.unfold(x, 3, 2))), {"x": rng.standard_normal((2, 9))}


def _fold(rng):
    p = _proj(rng, (2, 9))
    return (lambda x: p(ag.fold(x, 2, 9))), {"x": rng.standard_normal((2, 4, 3))}


def _rfft(rng):
    p = _proj(rng, (2, 5, 2))
    return (lambda x: p(ag.rfft(x, 8))), {"x": rng.standard_normal((2, 8))}


def _irfft(rng):
    p = _proj(rng, (2, 8))
    return (lambda x: p(ag.irfft(x, 8))), {"x": rng.standard_normal((2, 5, 2))}


def _complex_mul(rng):
    p = _proj(rng, (3, 4, 2))
    return (lambda a, b: p(ag.complex_mul(a, b))), {"a": rng.standard_normal((3, 4, 2)),
                                                     "b": rng.standard_normal((4, 2))}


def _complex_split_join(rng):
    p = _proj(rng, (3, 2))

    def fn(x):
        re, im = ag.complex_split(x)
        return p(ag.complex_join(im * re, re - im))
    return fn, {"x": rng.standard_normal((3, 2))}


def _avg_pool(rng):
    p = _proj(rng, (2, 4, 3))
    return (lambda x: p(ag.avg_pool2(x))), {"x": rng.standard_normal((2, 9, 3))}


def _recurrence(rng):
    p = _proj(rng, (2, 6, 3))
    return (lambda a, b, h0: p(ag.linear_recurrence(a, b, h0))), {
        "a": rng.uniform(-0.9, 0.9, (2, 6, 3)), "b": rng.standard_normal((2, 6, 3)), "h0": rng.standard_normal((2, 3))}


def _pad(rng):
    p = _proj(rng, (4, 7))
    return (lambda x: p(ag.pad(x, [(1, 0), (2, 2)]))), {"x": rng.standard_normal((3, 3))}


def _weight_norm(rng):
    p = _proj(rng, (3, 4))
    return (lambda d, g: p(weight_norm_effective(d, g))), {"d": rng.standard_normal((3, 4)),
                                                            "g": rng.standard_normal(3)}


def _stft_mag(rng):
    w = np.hanning(16)
    p = _proj(rng, (1, 6, 9))
    return (lambda x: p(ag.sqrt(power_tensor(stft_tensor(x, 16, 8, w)) + 1e-3))), {"x": rng.standard_normal((1, 40))}


def _istft(rng):
    cfg = StftConfig(fft_len=16, hop=8)
    p = _proj(rng, (1, 40))
    return (lambda s: p(istft_tensor(s, cfg, 40))), {"s": rng.standard_normal((1, cfg.n_frames(40), 9, 2))}


def _frames(rng):
    p = _proj(rng, (2, 6, 8))
    return (lambda x: p(frames_tensor(x, 8, 4, 4))), {"x": rng.standard_normal((2, 20))}


def _norms(rng):
    def fn(x):
        return ag.abs_(x).sum() + ag.sqrt(ag.square(x).sum())
    return fn, {"x": _away_from(rng, (3, 4))}


def _deep_filter(rng):
    p = _proj(rng, (1, 3, 4, 2))
    return (lambda c, w: p(deep_filter_tensor(c, w))), {"c": rng.standard_normal((1, 3, 4, 5, 2)),
                                                         "w": rng.standard_normal((1, 3, 4, 5, 2))}


OP_CASES = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b, b_positive=True),
    "neg": _unary(lambda x: -x),
    "power": _unary(lambda x: ag.power(x, 1.7), "positive"),
    "exp": _unary(ag.exp),
    "log": _unary(ag.log, "positive"),
    "sqrt": _unary(ag.sqrt, "positive"),
    "tanh": _unary(ag.tanh),
    "sigmoid": _unary(ag.sigmoid),
    "softplus": _unary(ag.softplus),
    "relu": _unary(ag.relu, "kink"),
    "leaky_relu": _unary(ag.leaky_relu, "kink"),
    "abs": _unary(ag.abs_, "kink"),
    "square": _unary(ag.square),
    "clip": _clip,
    "sum_axis": _shape_op(lambda x: ag.sum_(x, axis=1), (3, 4), (3,)),
    "mean_keepdims": _shape_op(lambda x: ag.mean(x, axis=0, keepdims=True), (3, 4), (1, 4)),
    "reshape": _shape_op(lambda x: ag.reshape(x, (2, 6)), (3, 4), (2, 6)),
    "transpose": _shape_op(lambda x: ag.transpose(x, (2, 0, 1)), (2, 3, 4), (4, 2, 3)),
    "swapaxes": _shape_op(lambda x: ag.swapaxes(x, 0, 2), (2, 3, 4), (4, 3, 2)),
    "getitem_slice": _shape_op(lambda x: x[1:, ::-2], (3, 4), (2, 2)),
    "getitem_fancy": _fancy_index,
    "concat": _concat,
    "stack": _stack,
    "pad": _pad,
    "matmul": _matmul,
    "einsum": _einsum,
    "unfold": _unfold,
    "fold": _fold,
    "rfft": _rfft,
    "irfft": _irfft,
    "complex_split_join": _complex_split_join,
    "complex_mul": _complex_mul,
    "avg_pool2": _avg_pool,
    "linear_recurrence": _recurrence,
    "weight_norm": _weight_norm,
    "stft_magnitude": _stft_mag,
    "istft": _istft,
    "frames": _frames,
    "l1_l2_norms": _norms,
    "deep_filter": _deep_filter,
}


def run_op_case(name: str, seed: int) -> float:
    rng = np.random.default_rng([seed, len(name)])
    fn, inputs = OP_CASES[name](rng)
    return max(check_gradients(fn, inputs, h=1e-5, rng=rng).values())


# -- layers and networks: directional checks over every parameter tensor ---------


def _layer(name: str, seed: int):
    rng = np.random.default_rng(seed)
    if name == "linear_wn":
        m = Linear(5, 4, rng, weight_norm=True)
        x = rng.standard_normal((3, 5))
        return m, lambda: m(x)
    if name == "grouped_linear":
        m = GroupedLinear(6, 4, 2, rng)
        x = rng.standard_normal((3, 6))
        return m, lambda: m(x)
    if name == "conv1d_strided_grouped":
        m = Conv1d(4, 6, 5, rng, stride=2, groups=2, padding=(2, 2), weight_norm=True)
        x = rng.standard_normal((2, 11, 4))
        return m, lambda: m(x)
    if name == "conv1d_causal":
        m = Conv1d(2, 3, 3, rng, padding="causal")
        x = rng.standard_normal((2, 7, 2))
        return m, lambda: m(x)
    if name == "time_freq_conv":
        m = TimeFreqConv(2, 3, 2, 3, rng)
        x = rng.standard_normal((1, 4, 5, 2))
        ctx = rng.standard_normal((1, 1, 5, 2))
        return m, lambda: m(x, ctx)[0]
    if name == "gru":
        m = GRU(3, 4, rng)
        x = rng.standard_normal((2, 5, 3))
        h0 = rng.standard_normal((2, 4))
        return m, lambda: m(x, h0)[0]
    if name == "selective_ssm":
        m = SelectiveSSM(4, 3, rng, weight_norm=True)
        x = rng.standard_normal((2, 6, 4))
        h0 = rng.standard_normal((2, 3))
        return m, lambda: m(x, h0)[0]
    raise KeyError(name)


LAYER_CASES = ("linear_wn", "grouped_linear", "conv1d_strided_grouped", "conv1d_causal", "time_freq_conv",
               "gru", "selective_ssm")


def run_layer_case(name: str, seed: int) -> float:
    module, forward = _layer(name, seed)
    out_shape = forward().shape
    r = np.random.default_rng(seed + 100).standard_normal(out_shape)
    errs = check_directional(lambda: (forward() * r).sum(), module.parameters(),
                             rng=np.random.default_rng(seed))
    return max(errs.values())


def _network(name: str, seed: int):
    rng = np.random.default_rng(seed + 500)
    bins = SMALL_STFT.n_bins
    if name == "stage1":
        m = small_stage1(seed)
        spec = rng.standard_normal((1, 6, bins, 2))
        return m, lambda: m.run_offline(spec)[0]
    if name == "generator":
        m = small_generator(seed)
        y, z = rng.standard_normal((2, 1, 5, bins, 2))
        return m, lambda: m(y, z)[0]
    if name == "discriminator":
        m = small_discriminator(seed)
        x = rng.standard_normal((1, 64))
        return m, lambda: ag.concat(m(x), axis=1)
    raise KeyError(name)


NETWORK_CASES = ("stage1", "generator", "discriminator")


def run_network_case(name: str, seed: int) -> float:
    module, forward = _network(name, seed)
    r = np.random.default_rng(seed + 7).standard_normal(forward().shape)
    errs = check_directional(lambda: (forward() * r).sum(), module.parameters(),
                             rng=np.random.default_rng(seed))
    return max(errs.values())


# -- losses --------------------------------------------------------------------------


def _loss(name: str, seed: int):
    rng = np.random.default_rng(seed + 900)
    clean = rng.standard_normal((1, 400))
    est = 0.6 * clean + 0.4 * rng.standard_normal((1, 400))
    small = Stage1LossConfig(stft=StftConfig(fft_len=64, hop=32), multires_fft_sizes=(32, 64), mel_bands=8,
                             local_snr_frame_ms=1.0)
    w = np.hanning(64)
    if name == "compressed_spectral":
        fn = lambda est: compressed_spectral_loss(stft_tensor(clean, 64, 32, w), stft_tensor(est, 64, 32, w), 0.3)  # noqa: E731
    elif name == "multires":
        fn = lambda est: multires_loss(ag.Tensor(clean), est, (32, 64), "raw")  # noqa: E731
    elif name == "local_snr":
        fn = lambda est: local_snr_loss(ag.Tensor(clean), est, 48, -15.0, 35.0)  # noqa: E731
    elif name == "si_sdr":
        fn = lambda est: si_sdr_tensor(ag.Tensor(clean), est).sum()  # noqa: E731
    elif name == "mel_l1":
        from regen_stream.dsp import build_filterbank
        mel = build_filterbank("mel", 8, StftConfig(fft_len=64, hop=32)).matrix
        fn = lambda est: mel_l1_loss(stft_tensor(clean, 64, 32, w), stft_tensor(est, 64, 32, w), mel)  # noqa: E731
    elif name == "stage1_composite":
        fn = lambda est: stage1_loss(clean, est, small).tensor  # noqa: E731
    elif name == "generator_total":
        fn = lambda est: generator_total_loss(generator_adversarial_loss([est[:, :50], est[:, 50:75]]),  # noqa: E731
                                              clean, est, beta=3.0).tensor
    elif name == "hinge":
        fn = lambda est: hinge_discriminator_loss([est[:, :40] * 2], [est[:, 40:80] * 2])  # noqa: E731
    else:
        raise KeyError(name)
    return fn, {"est": est}


LOSS_CASES = ("compressed_spectral", "multires", "local_snr", "si_sdr", "mel_l1", "stage1_composite",
              "generator_total", "hinge")


def run_loss_case(name: str, seed: int) -> float:
    fn, inputs = _loss(name, seed)
    rng = np.random.default_rng(seed)
    return max(check_gradients(fn, inputs, h=1e-5, max_coords=40, rng=rng).values())
