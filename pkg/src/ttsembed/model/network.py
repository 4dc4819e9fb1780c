"""Joint multi-speaker TTS network.

Components: conv+BiLSTM text encoder, residual-conv speaker encoder with
learnable-dictionary pooling, location-sensitive attention, and an
autoregressive decoder that predicts groups of reduction_factor acoustic
frames plus a stop logit. The speaker embedding is concatenated to every
encoded text vector before attention.
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DataError, DimensionError
from .config import ModelConfig


def div(a, b):
    """Broadcasting division built from primitives (b must stay nonzero)."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    inv = Tensor(1.0 / b.data)

    def back(g):
        ad._accumulate(a, ad._unbroadcast(g * inv.data, a.data.shape))
        ad._accumulate(b, ad._unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return ad._result(a.data * inv.data, (a, b), back)


def _glorot(rng, fan_in, fan_out, shape):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class TTSModel:
    """Parameter container plus forward passes; all math runs on the tape."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, n_speakers: int = 0,
                 seed: int = 0):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.n_speakers = n_speakers
        rng = np.random.default_rng(seed)
        p = {}

        d = cfg.text_hidden
        k = cfg.text_conv_kernel
        p["embed"] = _glorot(rng, vocab_size, d, (vocab_size, d))
        for i in range(cfg.text_conv_layers):
            p[f"tconv{i}_w"] = _glorot(rng, d * k, d, (d, d, k))
            p[f"tconv{i}_b"] = np.zeros((1, d))
        half = d // 2
        for direction in ("fwd", "bwd"):
            p[f"tlstm_{direction}_wx"] = _glorot(rng, d, 4 * half, (d, 4 * half))
            p[f"tlstm_{direction}_wh"] = _glorot(rng, half, 4 * half, (half, 4 * half))
            p[f"tlstm_{direction}_b"] = np.zeros((1, 4 * half))

        c1, c2 = cfg.resnet_channels
        p["stem_w"] = _glorot(rng, 9, c1 * 9, (c1, 1, 3, 3))
        p["stem_b"] = np.zeros((c1, 1, 1))
        for name, ch in (("b1", c1), ("b2", c2)):
            for j in (1, 2):
                p[f"{name}c{j}_w"] = _glorot(rng, ch * 9, ch * 9, (ch, ch, 3, 3))
                p[f"{name}c{j}_b"] = np.zeros((ch, 1, 1))
        p["down_w"] = _glorot(rng, c1 * 9, c2 * 9, (c2, c1, 3, 3))
        p["down_b"] = np.zeros((c2, 1, 1))

        self.frame_dim = c2 * ((cfg.n_mels - 1) // 2 + 1)   # channels x pooled bands
        c = cfg.lde_components
        p["lde_mu"] = rng.standard_normal((c, self.frame_dim)) / math.sqrt(self.frame_dim)
        p["lde_logs"] = np.zeros(c)
        p["spk_w"] = _glorot(rng, c * self.frame_dim, cfg.embedding_dim,
                             (c * self.frame_dim, cfg.embedding_dim))
        p["spk_b"] = np.zeros((1, cfg.embedding_dim))

        de, a = cfg.embedding_dim, cfg.attention_dim
        dh = cfg.decoder_hidden
        ctx = d + de
        p["att_wq"] = _glorot(rng, dh, a, (dh, a))
        p["att_wh"] = _glorot(rng, ctx, a, (ctx, a))
        p["att_wf"] = _glorot(rng, cfg.location_filters, a, (cfg.location_filters, a))
        p["att_b"] = np.zeros((1, a))
        p["att_v"] = _glorot(rng, a, 1, (a, 1))
        p["loc_w"] = _glorot(rng, cfg.location_kernel, cfg.location_filters,
                             (cfg.location_filters, 1, cfg.location_kernel))

        rda = cfg.reduction_factor * cfg.n_mels
        pu = cfg.prenet_units
        p["pre1_w"] = _glorot(rng, rda, pu, (rda, pu))
        p["pre1_b"] = np.zeros((1, pu))
        p["pre2_w"] = _glorot(rng, pu, pu, (pu, pu))
        p["pre2_b"] = np.zeros((1, pu))
        p["dec_wx"] = _glorot(rng, pu + ctx, 4 * dh, (pu + ctx, 4 * dh))
        p["dec_wh"] = _glorot(rng, dh, 4 * dh, (dh, 4 * dh))
        p["dec_b"] = np.zeros((1, 4 * dh))
        p["frame_w"] = _glorot(rng, dh + ctx, rda, (dh + ctx, rda))
        p["frame_b"] = np.zeros((1, rda))
        p["stop_w"] = _glorot(rng, dh + ctx, 1, (dh + ctx, 1))
        p["stop_b"] = np.zeros((1, 1))

        if n_speakers > 0:
            p["proj"] = _glorot(rng, de, n_speakers, (de, n_speakers))

        self.params: dict[str, Tensor] = {
            name: Tensor(v, requires_grad=True) for name, v in p.items()}

    # ------------------------------------------------------------------
    # text encoder
    # ------------------------------------------------------------------

    def encode_text(self, token_ids) -> Tensor:
        """Token ids -> J x D encoded text matrix."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size < 1:
            raise DataError("encode_text: empty token sequence")
        if np.any(ids >= self.vocab_size):
            raise DataError(f"token id out of range for vocabulary of {self.vocab_size}")
        p = self.params
        cfg = self.cfg
        x = ad.gather_rows(p["embed"], ids)                       # J x D
        pad = cfg.text_conv_kernel // 2
        for i in range(cfg.text_conv_layers):
            x = ad.tanh(ad.add(ad.conv1d_seq(x, p[f"tconv{i}_w"], padding=pad),
                               p[f"tconv{i}_b"]))
        j = ids.size
        half = cfg.text_hidden // 2
        outs_f, outs_b = [], []
        h = c = Tensor(np.zeros((1, half)))
        for t in range(j):
            xt = ad.getitem(x, (slice(t, t + 1), slice(None)))
            h, c = ad.recurrent_step(xt, (h, c), {
                "w_x": p["tlstm_fwd_wx"], "w_h": p["tlstm_fwd_wh"], "b": p["tlstm_fwd_b"]})
            outs_f.append(h)
        h = c = Tensor(np.zeros((1, half)))
        for t in reversed(range(j)):
            xt = ad.getitem(x, (slice(t, t + 1), slice(None)))
            h, c = ad.recurrent_step(xt, (h, c), {
                "w_x": p["tlstm_bwd_wx"], "w_h": p["tlstm_bwd_wh"], "b": p["tlstm_bwd_b"]})
            outs_b.append(h)
        outs_b.reverse()
        fwd = ad.concat(outs_f, axis=0)
        bwd = ad.concat(outs_b, axis=0)
        return ad.concat([fwd, bwd], axis=1)                      # J x D

    # ------------------------------------------------------------------
    # speaker encoder
    # ------------------------------------------------------------------

    def lde_pool(self, frames: Tensor) -> Tensor:
        """Soft-assignment residual pooling against C learned centers."""
        p = self.params
        mu = p["lde_mu"]                                          # C x D_f
        s = ad.exp(ad.reshape(p["lde_logs"], (1, self.cfg.lde_components)))
        x2 = ad.tsum(ad.square(frames), axis=1, keepdims=True)    # T x 1
        m2 = ad.reshape(ad.tsum(ad.square(mu), axis=1), (1, self.cfg.lde_components))
        cross = ad.matmul(frames, ad.transpose(mu))               # T x C
        sqdist = ad.add(ad.sub(x2, ad.mul(2.0, cross)), m2)
        w = ad.softmax(ad.mul(ad.neg(s), sqdist), axis=1)         # T x C
        wsum = ad.transpose(ad.tsum(w, axis=0, keepdims=True))    # C x 1
        num = ad.sub(ad.matmul(ad.transpose(w), frames),          # C x D_f
                     ad.mul(wsum, mu))
        pooled = div(num, ad.add(wsum, 1e-8))
        return ad.reshape(pooled, (1, self.cfg.lde_components * self.frame_dim))

    def encode_speaker(self, mel_frames) -> Tensor:
        """T x D_a log-mel matrix -> 1 x D_e speaker embedding."""
        p = self.params
        mel = mel_frames if isinstance(mel_frames, Tensor) else Tensor(mel_frames)
        t, d_a = mel.data.shape
        if t < 4:
            raise DataError(f"speaker encoder needs T >= 4 frames, got {t}")
        if d_a != self.cfg.n_mels:
            raise DimensionError(f"expected {self.cfg.n_mels} mel bands, got {d_a}")
        x = ad.reshape(mel, (1, t, d_a))
        x = ad.relu(ad.add(ad.conv2d(x, p["stem_w"], padding=1), p["stem_b"]))
        y = ad.relu(ad.add(ad.conv2d(x, p["b1c1_w"], padding=1), p["b1c1_b"]))
        y = ad.add(ad.conv2d(y, p["b1c2_w"], padding=1), p["b1c2_b"])
        x = ad.relu(ad.add(x, y))
        x = ad.relu(ad.add(ad.conv2d(x, p["down_w"], stride=2, padding=1), p["down_b"]))
        y = ad.relu(ad.add(ad.conv2d(x, p["b2c1_w"], padding=1), p["b2c1_b"]))
        y = ad.add(ad.conv2d(y, p["b2c2_w"], padding=1), p["b2c2_b"])
        x = ad.relu(ad.add(x, y))
        c2, t2, w2 = x.data.shape
        frames = ad.reshape(ad.transpose(x, (1, 0, 2)), (t2, c2 * w2))
        pooled = self.lde_pool(frames)
        return ad.affine(pooled, p["spk_w"], p["spk_b"])          # 1 x D_e

    # ------------------------------------------------------------------
    # attention and decoding
    # ------------------------------------------------------------------

    def attention_step(self, query: Tensor, h_cat: Tensor, h_proj: Tensor,
                       prev_weights: Tensor):
        """Location-sensitive attention; returns (context 1 x ctx, weights J x 1)."""
        p = self.params
        q = ad.matmul(query, p["att_wq"])                         # 1 x A
        loc = ad.conv1d_seq(prev_weights, p["loc_w"],
                            padding=self.cfg.location_kernel // 2)  # J x F
        loc = ad.matmul(loc, p["att_wf"])                         # J x A
        energy = ad.matmul(ad.tanh(ad.add(ad.add(h_proj, loc), ad.add(q, p["att_b"]))),
                           p["att_v"])                            # J x 1
        weights = ad.transpose(ad.softmax(ad.transpose(energy), axis=1))
        context = ad.matmul(ad.transpose(weights), h_cat)         # 1 x ctx
        return context, weights

    def _prenet(self, prev_frames: Tensor) -> Tensor:
        p = self.params
        x = ad.relu(ad.affine(prev_frames, p["pre1_w"], p["pre1_b"]))
        return ad.relu(ad.affine(x, p["pre2_w"], p["pre2_b"]))

    def decode_step(self, prev_frames: Tensor, state: dict, h_cat: Tensor,
                    h_proj: Tensor):
        """One decoder step: prenet, attention, LSTM, frame and stop heads."""
        p = self.params
        pre = self._prenet(prev_frames)
        context, weights = self.attention_step(state["h"], h_cat, h_proj,
                                               state["weights"])
        x = ad.concat([pre, context], axis=1)
        h, c = ad.recurrent_step(x, (state["h"], state["c"]), {
            "w_x": p["dec_wx"], "w_h": p["dec_wh"], "b": p["dec_b"]})
        hc = ad.concat([h, context], axis=1)
        frames = ad.affine(hc, p["frame_w"], p["frame_b"])          # 1 x r*D_a
        stop = ad.affine(hc, p["stop_w"], p["stop_b"])              # 1 x 1
        new_state = {"h": h, "c": c, "weights": weights}
        return frames, stop, new_state

    def _initial_state(self, j: int) -> dict:
        w0 = np.zeros((j, 1))
        w0[0, 0] = 1.0
        return {"h": Tensor(np.zeros((1, self.cfg.decoder_hidden))),
                "c": Tensor(np.zeros((1, self.cfg.decoder_hidden))),
                "weights": Tensor(w0)}

    def _speaker_broadcast(self, h: Tensor, e: Tensor) -> Tensor:
        j = h.data.shape[0]
        e_rows = ad.matmul(Tensor(np.ones((j, 1))), e)
        return ad.concat([h, e_rows], axis=1)

    def forward_teacher_forced(self, token_ids, mel_target: np.ndarray,
                               external_embedding: Tensor | None = None):
        """Full differentiable pass; returns (pred T x D_a, stop steps x 1,
        attention steps x J as numpy, embedding 1 x D_e)."""
        cfg = self.cfg
        r = cfg.reduction_factor
        t_frames = mel_target.shape[0]
        steps = -(-t_frames // r)
        padded = np.zeros((steps * r, cfg.n_mels))
        padded[:t_frames] = mel_target

        if external_embedding is None:
            e = self.encode_speaker(mel_target)
        else:
            e = external_embedding
        h = self.encode_text(token_ids)
        h_cat = self._speaker_broadcast(h, e)
        h_proj = ad.matmul(h_cat, self.params["att_wh"])

        state = self._initial_state(h.data.shape[0])
        prev = Tensor(np.zeros((1, r * cfg.n_mels)))
        frame_rows, stop_rows, attn_rows = [], [], []
        for i in range(steps):
            frames, stop, state = self.decode_step(prev, state, h_cat, h_proj)
            frame_rows.append(frames)
            stop_rows.append(stop)
            attn_rows.append(state["weights"].data[:, 0].copy())
            prev = Tensor(padded[i * r:(i + 1) * r].reshape(1, r * cfg.n_mels))
        pred_full = ad.reshape(ad.concat(frame_rows, axis=0), (steps * r, cfg.n_mels))
        pred = ad.getitem(pred_full, (slice(0, t_frames), slice(None)))
        stop_logits = ad.concat(stop_rows, axis=0)                 # steps x 1
        return pred, stop_logits, np.stack(attn_rows), e

    def synthesize(self, token_ids, e: Tensor, max_steps: int = 400,
                   stop_threshold: float = 0.5):
        """Autoregressive inference; returns (mel T x D_a, attention matrix)."""
        cfg = self.cfg
        r = cfg.reduction_factor
        h = self.encode_text(token_ids)
        h_cat = self._speaker_broadcast(h, e)
        h_proj = ad.matmul(h_cat, self.params["att_wh"])
        state = self._initial_state(h.data.shape[0])
        prev = Tensor(np.zeros((1, r * cfg.n_mels)))
        out, attn_rows = [], []
        for _ in range(max_steps):
            frames, stop, state = self.decode_step(prev, state, h_cat, h_proj)
            out.append(frames.data.reshape(r, cfg.n_mels).copy())
            attn_rows.append(state["weights"].data[:, 0].copy())
            if 1.0 / (1.0 + math.exp(-float(stop.data[0, 0]))) > stop_threshold:
                break
            prev = Tensor(frames.data.copy())
        return np.concatenate(out, axis=0), np.stack(attn_rows)
