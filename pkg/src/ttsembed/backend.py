"""Speaker-verification back-end: preprocessing, LDA, two-covariance PLDA.

Pipeline: center on training-set mean, length-normalize, LDA-project with
within-class whitening, then score trials with the PLDA log-likelihood
ratio. PLDA is the two-covariance model (speaker mean y ~ N(mu, B),
observation x ~ N(y, W)) fitted by EM.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError, NumericError


@dataclass
class EmbeddingRecord:
    utt_id: str
    speaker_id: str | None
    gender: str
    vector: np.ndarray


@dataclass
class EmbeddingSet:
    records: list = field(default_factory=list)

    def matrix(self) -> np.ndarray:
        return np.stack([r.vector for r in self.records])

    def labels(self) -> list:
        return [r.speaker_id for r in self.records]

    def __len__(self):
        return len(self.records)


def save_embeddings(path, embs: EmbeddingSet):
    with open(path, "w", encoding="utf-8") as f:
        for r in embs.records:
            f.write(json.dumps({"utt_id": r.utt_id, "speaker_id": r.speaker_id,
                                "gender": r.gender,
                                "vector": [float(x) for x in r.vector]},
                               sort_keys=True) + "\n")


def load_embeddings(path) -> EmbeddingSet:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                records.append(EmbeddingRecord(
                    d["utt_id"], d["speaker_id"], d["gender"],
                    np.asarray(d["vector"], dtype=np.float64)))
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError(f"{path}:{lineno}: malformed embedding line ({e})")
    return EmbeddingSet(records)


# ---------------------------------------------------------------------------
# preprocessing: center on training mean, length-normalize
# ---------------------------------------------------------------------------

def training_mean(train: EmbeddingSet) -> np.ndarray:
    if len(train) == 0:
        raise DataError("empty training embedding set")
    return train.matrix().mean(axis=0)


def preprocess(embs: EmbeddingSet, mean: np.ndarray) -> EmbeddingSet:
    out = []
    for r in embs.records:
        v = r.vector - mean
        norm = float(np.linalg.norm(v))
        if norm < 1e-300:
            raise NumericError(f"zero-norm embedding for {r.utt_id}")
        out.append(EmbeddingRecord(r.utt_id, r.speaker_id, r.gender, v / norm))
    return EmbeddingSet(out)


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

@dataclass
class LdaModel:
    mean: np.ndarray                 # input-space mean
    projection: np.ndarray           # D_in x d_out, S_w-orthonormal columns

    def project(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.projection


def lda_fit(vectors: np.ndarray, labels, d_out: int) -> LdaModel:
    """Generalized eigenproblem S_b v = lambda S_w v, within-class whitened."""
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ConfigError("LDA needs at least 2 classes")
    if d_out > len(classes) - 1:
        raise ConfigError(f"d_out {d_out} exceeds n_classes-1 = {len(classes) - 1}")
    dim = vectors.shape[1]
    mean = vectors.mean(axis=0)
    s_w = np.zeros((dim, dim))
    s_b = np.zeros((dim, dim))
    for c in classes:
        xc = vectors[[i for i, l in enumerate(labels) if l == c]]
        if xc.shape[0] < 2:
            raise ConfigError(f"class {c!r} has fewer than 2 samples")
        mu_c = xc.mean(axis=0)
        xm = xc - mu_c
        s_w += xm.T @ xm
        d = (mu_c - mean)[:, None]
        s_b += xc.shape[0] * (d @ d.T)
    s_w /= vectors.shape[0]
    s_b /= vectors.shape[0]
    s_w += (1e-6 * np.trace(s_w) / dim) * np.eye(dim)
    try:
        eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w)
    except scipy.linalg.LinAlgError as e:
        raise NumericError(f"LDA eigenproblem failed: {e}")
    order = np.argsort(eigvals)[::-1][:d_out]
    proj = eigvecs[:, order]
    # scipy.linalg.eigh returns S_w-orthonormal eigenvectors, so the projected
    # within-class covariance is already the identity
    return LdaModel(mean, proj)


# ---------------------------------------------------------------------------
# two-covariance PLDA
# ---------------------------------------------------------------------------

@dataclass
class PldaModel:
    mu: np.ndarray
    sigma_b: np.ndarray
    sigma_w: np.ndarray


def _check_cov(name: str, cov: np.ndarray, iteration: int):
    if not np.all(np.isfinite(cov)):
        raise NumericError(f"{name} non-finite at EM iteration {iteration}")
    eig = np.linalg.eigvalsh((cov + cov.T) / 2)
    if eig.min() < 1e-10:
        raise NumericError(
            f"{name} collapsed (min eigenvalue {eig.min():.3e}) at EM iteration {iteration}")


def _gaussian_logdet_inv(cov: np.ndarray):
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    inv = np.linalg.inv(cov)
    return logdet, inv


def plda_log_likelihood(model: PldaModel, groups) -> float:
    """Total marginal log-likelihood of per-speaker observation groups."""
    total = 0.0
    d = model.mu.size
    _, w_inv = _gaussian_logdet_inv(model.sigma_w)
    logdet_w = 2.0 * np.log(np.diag(np.linalg.cholesky(model.sigma_w))).sum()
    b_inv = np.linalg.inv(model.sigma_b)
    logdet_b = 2.0 * np.log(np.diag(np.linalg.cholesky(model.sigma_b))).sum()
    for x in groups:
        n = x.shape[0]
        prec = b_inv + n * w_inv
        cov_post = np.linalg.inv(prec)
        rhs = b_inv @ model.mu + w_inv @ x.sum(axis=0)
        m_post = cov_post @ rhs
        # log integral of N(y; mu, B) * prod N(x_i; y, W) dy
        quad = (model.mu @ b_inv @ model.mu
                + np.einsum("ij,jk,ik->", x, w_inv, x)
                - m_post @ prec @ m_post)
        logdet_post = 2.0 * np.log(np.diag(np.linalg.cholesky(cov_post))).sum()
        total += -0.5 * (n * d * np.log(2 * np.pi) + n * logdet_w + logdet_b
                         - logdet_post + quad)
    return float(total)


def plda_fit(vectors: np.ndarray, labels, em_iters: int = 20,
             track_ll: bool = False):
    """EM for the two-covariance model; returns PldaModel (and LL trace)."""
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ConfigError("PLDA needs at least 2 classes")
    groups = []
    for c in classes:
        xc = vectors[[i for i, l in enumerate(labels) if l == c]]
        if xc.shape[0] < 2:
            raise ConfigError(f"class {c!r} has fewer than 2 samples")
        groups.append(xc)

    dim = vectors.shape[1]
    n_total = vectors.shape[0]
    class_means = np.stack([g.mean(axis=0) for g in groups])
    mu = vectors.mean(axis=0)
    sigma_b = np.cov(class_means.T, bias=True) + 1e-3 * np.eye(dim)
    sigma_b = np.atleast_2d(sigma_b)
    sigma_w = sum(((g - g.mean(axis=0)).T @ (g - g.mean(axis=0)) for g in groups))
    sigma_w = np.atleast_2d(sigma_w) / n_total + 1e-3 * np.eye(dim)

    ll_trace = []
    for it in range(em_iters):
        b_inv = np.linalg.inv(sigma_b)
        w_inv = np.linalg.inv(sigma_w)
        ey = []
        cov_posts = []
        for x in groups:
            n = x.shape[0]
            cov_post = np.linalg.inv(b_inv + n * w_inv)
            m_post = cov_post @ (b_inv @ mu + w_inv @ x.sum(axis=0))
            ey.append(m_post)
            cov_posts.append(cov_post)
        ey = np.stack(ey)
        if track_ll:
            ll_trace.append(plda_log_likelihood(PldaModel(mu, sigma_b, sigma_w), groups))
        mu = ey.mean(axis=0)
        dm = ey - mu
        sigma_b = (dm.T @ dm) / len(groups) + np.mean(cov_posts, axis=0)
        sw = np.zeros((dim, dim))
        for x, m_post, cov_post in zip(groups, ey, cov_posts):
            xm = x - m_post
            sw += xm.T @ xm + x.shape[0] * cov_post
        sigma_w = sw / n_total
        sigma_w += (1e-6 * np.trace(sigma_w) / dim) * np.eye(dim)
        sigma_b = (sigma_b + sigma_b.T) / 2
        sigma_w = (sigma_w + sigma_w.T) / 2
        _check_cov("sigma_w", sigma_w, it)
        if not np.all(np.isfinite(sigma_b)):
            raise NumericError(f"sigma_b non-finite at EM iteration {it}")
    model = PldaModel(mu, sigma_b, sigma_w)
    if track_ll:
        ll_trace.append(plda_log_likelihood(model, groups))
        return model, ll_trace
    return model


class PldaScorer:
    """Closed-form Gaussian LLR: same-speaker joint vs independent marginals."""

    def __init__(self, model: PldaModel):
        self.model = model
        d = model.mu.size
        tot = model.sigma_b + model.sigma_w
        joint_same = np.block([[tot, model.sigma_b], [model.sigma_b, tot]])
        joint_diff = np.block([[tot, np.zeros((d, d))], [np.zeros((d, d)), tot]])
        self._ld_same, self._inv_same = _gaussian_logdet_inv(joint_same)
        self._ld_diff, self._inv_diff = _gaussian_logdet_inv(joint_diff)

    def score(self, enroll: np.ndarray, test: np.ndarray) -> float:
        if enroll.shape != self.model.mu.shape or test.shape != self.model.mu.shape:
            raise DataError("embedding dimension does not match PLDA model")
        z = np.concatenate([enroll - self.model.mu, test - self.model.mu])
        q_same = z @ self._inv_same @ z
        q_diff = z @ self._inv_diff @ z
        return float(-0.5 * (q_same - q_diff) - 0.5 * (self._ld_same - self._ld_diff))


def save_backend(path, mean: np.ndarray, lda: LdaModel, plda: PldaModel):
    doc = {
        "mean": mean.tolist(),
        "lda_mean": lda.mean.tolist(),
        "projection": lda.projection.tolist(),
        "mu": plda.mu.tolist(),
        "sigma_b": plda.sigma_b.tolist(),
        "sigma_w": plda.sigma_w.tolist(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_backend(path):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    mean = np.asarray(doc["mean"], dtype=np.float64)
    lda = LdaModel(np.asarray(doc["lda_mean"], dtype=np.float64),
                   np.asarray(doc["projection"], dtype=np.float64))
    plda = PldaModel(np.asarray(doc["mu"], dtype=np.float64),
                     np.asarray(doc["sigma_b"], dtype=np.float64),
                     np.asarray(doc["sigma_w"], dtype=np.float64))
    return mean, lda, plda
