"""Sequential heterogeneous incomplete VAE.

One LSTM chain ``h_t`` is shared by the generative and inference paths. At
each step, with ``h_prev = h_{t-1}`` and zero-filled encoded input ``x~_t``::

    log q(s_t)      = log_softmax(phi_s(x~_t, h_prev))
    s_t             ~ GumbelSoftmax(log q(s_t), tau)
    p(z_t | .)      = N(phi_prior(h_prev, s_t))
    q(z_t | .)      = N(phi_enc(phi_x(x~_t), h_prev, s_t))
    z_t             = mu_z + sqrt(var_z) * eps
    y_t             = phi_z(z_t)
    gamma_t^d       = phi_dec_d(y_t, s_t, h_prev)
    h_t             = LSTM(y_t, h_prev)

Positive attributes are modelled by a Gaussian head on the standardized log,
which is the log-normal likelihood in data space up to a Jacobian term that
does not depend on the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence as Seq

import torch
from torch import nn
import torch.nn.functional as F

from .datamodel import AttributeSchema
from .errors import ConfigError, DataError, NumericFault

VAR_FLOOR = 1e-5
LOGIT_CLAMP = 15.0
LOG_2PI = math.log(2 * math.pi)


class Gaussian(NamedTuple):
    mean: torch.Tensor
    var: torch.Tensor


@dataclass
class ElboTerms:
    recon: torch.Tensor
    kl_z: torch.Tensor
    kl_s: torch.Tensor
    beta: float
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {"recon": self.recon.item(), "kl_z": self.kl_z.item(), "kl_s": self.kl_s.item(),
                "beta": float(self.beta), "total": self.total.item()}


def positive_var(raw: torch.Tensor) -> torch.Tensor:
    return F.softplus(raw).clamp_min(VAR_FLOOR)


def _split_gaussian(out: torch.Tensor) -> Gaussian:
    mean, raw = out.chunk(2, dim=-1)
    return Gaussian(mean, positive_var(raw))


def mlp(n_in: int, n_hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, n_hidden), nn.ReLU(), nn.Linear(n_hidden, n_out))


def gumbel_noise(shape, generator=None, dtype=torch.float64) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    tiny = torch.finfo(dtype).tiny
    return -torch.log((-torch.log(u.clamp(tiny, 1.0))).clamp_min(tiny))


def gumbel_softmax_sample(log_probs: torch.Tensor, temperature: float = 1.0, generator=None,
                          noise: torch.Tensor | None = None) -> torch.Tensor:
    """Relaxed one-hot draw ``softmax((log_probs + g) / temperature)``."""
    if not temperature > 0:
        raise ConfigError(f"Gumbel-softmax temperature must be > 0, got {temperature}")
    if noise is None:
        noise = gumbel_noise(log_probs.shape, generator, log_probs.dtype)
    return torch.softmax((log_probs + noise) / temperature, dim=-1)


def hard_categorical_sample(log_probs: torch.Tensor, generator=None,
                            noise: torch.Tensor | None = None) -> torch.Tensor:
    """Exact categorical draw as a one-hot vector (Gumbel-max)."""
    if noise is None:
        noise = gumbel_noise(log_probs.shape, generator, log_probs.dtype)
    idx = torch.argmax(log_probs + noise, dim=-1)
    return F.one_hot(idx, log_probs.shape[-1]).to(log_probs.dtype)


def reparameterize(gp: Gaussian, generator=None, eps: torch.Tensor | None = None) -> torch.Tensor:
    if eps is None:
        eps = torch.randn(gp.mean.shape, generator=generator, dtype=gp.mean.dtype)
    return gp.mean + gp.var.sqrt() * eps


def kl_gaussian_diag(q: Gaussian, p: Gaussian) -> torch.Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians, summed over the last axis."""
    return 0.5 * (torch.log(p.var) - torch.log(q.var) + (q.var + (q.mean - p.mean) ** 2) / p.var - 1).sum(-1)


def kl_categorical(q_log_probs: torch.Tensor) -> torch.Tensor:
    """KL(q || uniform) over the last axis."""
    L = q_log_probs.shape[-1]
    q = q_log_probs.exp()
    return (q * (q_log_probs + math.log(L))).sum(-1)


def gaussian_log_density(x, mean, var):
    return -0.5 * (LOG_2PI + torch.log(var) + (x - mean) ** 2 / var)


class ShiVAE(nn.Module):
    """Networks of the model; ``hidden`` is the width of every feature net."""

    def __init__(self, schema: Seq[AttributeSchema], latent_dim: int = 2, hidden_dim: int = 10,
                 n_components: int = 3, hidden: int = 32):
        super().__init__()
        if min(latent_dim, hidden_dim, n_components, hidden) < 1:
            raise ConfigError("latent, hidden and mixture sizes must be >= 1")
        self.schema = tuple(schema)
        self.K, self.H, self.L, self.hidden = latent_dim, hidden_dim, n_components, hidden
        self.widths = [a.width for a in self.schema]
        E = sum(self.widths)
        self.encoded_dim = E
        K, H, L = latent_dim, hidden_dim, n_components

        self.phi_x = nn.Sequential(nn.Linear(E, hidden), nn.ReLU())
        self.phi_z = nn.Sequential(nn.Linear(K, hidden), nn.ReLU())
        self.phi_prior = mlp(H + L, hidden, 2 * K)
        self.phi_enc = mlp(hidden + H + L, hidden, 2 * K)
        self.phi_s = mlp(E + H, hidden, L)
        self.rnn = nn.LSTMCell(hidden, H)
        self.phi_dec = nn.ModuleList(mlp(hidden + L + H, hidden, self._arity(a)) for a in self.schema)

    @staticmethod
    def _arity(attr: AttributeSchema) -> int:
        if attr.kind in ("real", "positive"):
            return 2
        if attr.kind == "binary":
            return 1
        return attr.num_classes

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def config(self) -> dict:
        return {"latent_dim": self.K, "hidden_dim": self.H, "n_components": self.L, "hidden": self.hidden}

    # ------------------------------------------------------------ single steps

    def prior_step(self, h_prev: torch.Tensor, s_t: torch.Tensor) -> Gaussian:
        return _split_gaussian(self.phi_prior(torch.cat([h_prev, s_t], -1)))

    def recurrence_step(self, y_prev: torch.Tensor, state=None):
        """LSTM update; returns ``(h, c)``. ``state=None`` is the zero state."""
        return self.rnn(y_prev, state)

    def encode_s(self, x_tilde: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.phi_s(torch.cat([x_tilde, h_prev], -1)), -1)

    def encode_z(self, x_tilde: torch.Tensor, h_prev: torch.Tensor, s_t: torch.Tensor) -> Gaussian:
        feat = self.phi_x(x_tilde)
        return _split_gaussian(self.phi_enc(torch.cat([feat, h_prev, s_t], -1)))

    def decode_step(self, y_t: torch.Tensor, s_t: torch.Tensor, h_prev: torch.Tensor) -> list[dict]:
        """Likelihood parameters per attribute.

        Gaussian heads give ``mean``/``var``, binary heads ``logit``/``p``,
        categorical heads ``log_probs``.
        """
        inp = torch.cat([y_t, s_t, h_prev], -1)
        params = []
        for attr, net in zip(self.schema, self.phi_dec):
            out = net(inp)
            if attr.kind in ("real", "positive"):
                g = _split_gaussian(out)
                params.append({"mean": g.mean[..., 0], "var": g.var[..., 0]})
            elif attr.kind == "binary":
                logit = out[..., 0].clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
                params.append({"logit": logit, "p": torch.sigmoid(logit)})
            else:
                params.append({"log_probs": torch.log_softmax(out, -1)})
        return params

    def log_likelihood_observed(self, x_t: torch.Tensor, attr_mask_t: torch.Tensor,
                                lp: list[dict]) -> torch.Tensor:
        """Sum of per-attribute log-likelihoods over observed attributes.

        ``x_t`` is the encoded step (``... x E``); missing cells may hold anything.
        """
        total = torch.zeros(x_t.shape[:-1], dtype=x_t.dtype)
        start = 0
        for d, (attr, w, par) in enumerate(zip(self.schema, self.widths, lp)):
            x = x_t[..., start:start + w]
            obs = attr_mask_t[..., d]
            start += w
            if attr.kind in ("real", "positive"):
                ll = gaussian_log_density(x[..., 0], par["mean"], par["var"])
            elif attr.kind == "binary":
                xb = x[..., 0]
                l = par["logit"]
                ll = -(xb * F.softplus(-l) + (1 - xb) * F.softplus(l))
            else:
                if obs.any():
                    onehot = x[obs]
                    bad = (onehot.sum(-1) - 1).abs() > 1e-9
                    if bad.any() or ((onehot != 0) & (onehot != 1)).any():
                        raise DataError(f"attribute {attr.name!r}: categorical code outside 0..{attr.num_classes - 1}")
                ll = (x * par["log_probs"]).sum(-1)
            total = total + torch.where(obs, ll, torch.zeros_like(ll))
        return total

    # ------------------------------------------------------------ sequences

    def _noise(self, B, T, generator, dtype):
        g = gumbel_noise((B, T, self.L), generator, dtype)
        eps = torch.randn((B, T, self.K), generator=generator, dtype=dtype)
        return g, eps

    def run(self, x: torch.Tensor, attr_mask: torch.Tensor, *, generator=None, noise=None,
            temperature: float = 1.0, hard: bool = False, z_mode: str = "sample",
            keep_params: bool = False) -> dict:
        """Forward filtering pass over ``B x T x E`` zero-filled inputs.

        Returns per-step ``recon``, ``kl_z``, ``kl_s`` (each ``B x T``) and,
        with ``keep_params``, the decoded likelihood parameters per step.
        """
        B, T, _ = x.shape
        gumbel, eps = noise if noise is not None else self._noise(B, T, generator, x.dtype)
        attr_mask = attr_mask.to(torch.bool)
        x_tilde = torch.where(torch.repeat_interleave(attr_mask, torch.tensor(self.widths), dim=-1),
                              x, torch.zeros_like(x))
        h = torch.zeros(B, self.H, dtype=x.dtype)
        c = torch.zeros(B, self.H, dtype=x.dtype)
        recon, kl_z, kl_s, params = [], [], [], []
        for t in range(T):
            xt = x_tilde[:, t]
            log_q_s = self.encode_s(xt, h)
            if hard:
                s = hard_categorical_sample(log_q_s, noise=gumbel[:, t])
            else:
                s = gumbel_softmax_sample(log_q_s, temperature, noise=gumbel[:, t])
            prior = self.prior_step(h, s)
            post = self.encode_z(xt, h, s)
            z = post.mean if z_mode == "mean" else reparameterize(post, eps=eps[:, t])
            y = self.phi_z(z)
            lp = self.decode_step(y, s, h)
            recon.append(self.log_likelihood_observed(xt, attr_mask[:, t], lp))
            kl_z.append(kl_gaussian_diag(post, prior))
            kl_s.append(kl_categorical(log_q_s))
            if keep_params:
                params.append(lp)
            h, c = self.recurrence_step(y, (h, c))
        out = {"recon": torch.stack(recon, 1), "kl_z": torch.stack(kl_z, 1), "kl_s": torch.stack(kl_s, 1)}
        if keep_params:
            out["params"] = params
        return out

    def elbo(self, x: torch.Tensor, attr_mask: torch.Tensor, valid: torch.Tensor | None = None,
             beta: float = 1.0, *, generator=None, noise=None, temperature: float = 1.0) -> ElboTerms:
        """Batch-averaged ELBO with one Gumbel-softmax and one reparameterized sample per step."""
        if not 0 <= beta <= 1:
            raise ConfigError(f"beta must be in [0, 1], got {beta}")
        out = self.run(x, attr_mask, generator=generator, noise=noise, temperature=temperature)
        if valid is None:
            valid = torch.ones(x.shape[:2], dtype=torch.bool)
        zero = torch.zeros_like(out["recon"])
        B = x.shape[0]
        recon = torch.where(valid, out["recon"], zero).sum() / B
        kl_z = torch.where(valid, out["kl_z"], zero).sum() / B
        kl_s = torch.where(valid, out["kl_s"], zero).sum() / B
        total = recon - beta * (kl_z + kl_s)
        if not torch.isfinite(total):
            raise NumericFault("non-finite ELBO", diagnostics={
                "recon": recon.item(), "kl_z": kl_z.item(), "kl_s": kl_s.item(),
                "batch_size": B, "max_abs_input": float(x.abs().max())})
        return ElboTerms(recon, kl_z, kl_s, beta, total)
