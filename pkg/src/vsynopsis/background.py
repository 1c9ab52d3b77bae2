"""Adaptive per-pixel Gaussian-mixture background model with shadow labelling.

Each pixel holds up to ``n_components_max`` Gaussians with a shared scalar
variance over the three RGB channels. Components are kept sorted by weight.
A sample matches a component when its squared colour distance is below
``var_threshold * variance``; it is background when the matched component is
among the leading components whose preceding cumulative weight is still below
``background_ratio``. The learning rate is ``1 / min(t, history)``.
"""

from __future__ import annotations

import numba
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_open_interval, check_positive_float, check_positive_int

BACKGROUND = 0
FOREGROUND = 1
SHADOW = 2


@numba.njit(cache=True, nogil=True, parallel=True)
def _update_kernel(
    frame, weights, means, variances, n_live, labels, alpha,
    var_threshold, background_ratio, shadow_ratio, var_init, var_min, var_max,
    min_weight, detect_shadows,
):
    n_pix = frame.shape[0]
    k_max = weights.shape[0]
    for p in numba.prange(n_pix):
        x0 = np.float64(frame[p, 0])
        x1 = np.float64(frame[p, 1])
        x2 = np.float64(frame[p, 2])
        n = n_live[p]

        # classification against the state before this sample
        matched = -1
        match_d2 = 0.0
        label = FOREGROUND
        cum = 0.0
        for m in range(n):
            d0 = x0 - means[m, p, 0]
            d1 = x1 - means[m, p, 1]
            d2 = x2 - means[m, p, 2]
            dist2 = d0 * d0 + d1 * d1 + d2 * d2
            if dist2 < var_threshold * variances[m, p]:
                matched = m
                match_d2 = dist2
                if cum < background_ratio:
                    label = BACKGROUND
                break
            cum += weights[m, p]

        if label == FOREGROUND and detect_shadows:
            cum = 0.0
            for m in range(n):
                if cum >= background_ratio:
                    break
                mu0 = means[m, p, 0]
                mu1 = means[m, p, 1]
                mu2 = means[m, p, 2]
                denom = mu0 * mu0 + mu1 * mu1 + mu2 * mu2
                if denom > 0.0:
                    a = (x0 * mu0 + x1 * mu1 + x2 * mu2) / denom
                    if a >= shadow_ratio and a < 1.0:
                        e0 = a * mu0 - x0
                        e1 = a * mu1 - x1
                        e2 = a * mu2 - x2
                        if e0 * e0 + e1 * e1 + e2 * e2 < var_threshold * variances[m, p] * a * a:
                            label = SHADOW
                            break
                cum += weights[m, p]
        labels[p] = label

        # model update
        for m in range(n):
            weights[m, p] *= 1.0 - alpha
        if matched >= 0:
            target = matched
            w = weights[matched, p] + alpha
            weights[matched, p] = w
            k = alpha / w
            means[matched, p, 0] += k * (x0 - means[matched, p, 0])
            means[matched, p, 1] += k * (x1 - means[matched, p, 1])
            means[matched, p, 2] += k * (x2 - means[matched, p, 2])
            v = variances[matched, p] + k * (match_d2 / 3.0 - variances[matched, p])
            if v < var_min:
                v = var_min
            elif v > var_max:
                v = var_max
            variances[matched, p] = v
        else:
            if n < k_max:
                target = n
                n += 1
            else:
                target = n - 1
            weights[target, p] = alpha
            means[target, p, 0] = x0
            means[target, p, 1] = x1
            means[target, p, 2] = x2
            variances[target, p] = var_init

        # cull weak components, except the one just updated
        j = 0
        for m in range(n):
            if m != target and weights[m, p] < min_weight:
                continue
            if j != m:
                weights[j, p] = weights[m, p]
                means[j, p, 0] = means[m, p, 0]
                means[j, p, 1] = means[m, p, 1]
                means[j, p, 2] = means[m, p, 2]
                variances[j, p] = variances[m, p]
            j += 1
        n = j

        total = 0.0
        for m in range(n):
            total += weights[m, p]
        for m in range(n):
            weights[m, p] /= total

        # stable insertion sort, descending weight
        for m in range(1, n):
            w = weights[m, p]
            mu0 = means[m, p, 0]
            mu1 = means[m, p, 1]
            mu2 = means[m, p, 2]
            var = variances[m, p]
            q = m - 1
            while q >= 0 and weights[q, p] < w:
                weights[q + 1, p] = weights[q, p]
                means[q + 1, p, 0] = means[q, p, 0]
                means[q + 1, p, 1] = means[q, p, 1]
                means[q + 1, p, 2] = means[q, p, 2]
                variances[q + 1, p] = variances[q, p]
                q -= 1
            weights[q + 1, p] = w
            means[q + 1, p, 0] = mu0
            means[q + 1, p, 1] = mu1
            means[q + 1, p, 2] = mu2
            variances[q + 1, p] = var
        for m in range(n, k_max):
            weights[m, p] = 0.0
        n_live[p] = n


@numba.njit(cache=True, nogil=True)
def _top_means(means, out):
    # means are convex combinations of samples, so they stay within [0, 255]
    top = means[0]
    for p in range(top.shape[0]):
        for c in range(3):
            out[p, c] = np.uint8(top[p, c] + 0.5)


class BackgroundSubtractor(BaseEstimator):
    """Adaptive Gaussian-mixture background subtractor.

    Parameters
    ----------
    history : int
        Sample window; the learning rate is ``1 / min(t, history)``.
    var_threshold : float
        Match threshold on squared colour distance in units of the component
        variance.
    shadow_ratio : float
        Lowest brightness ratio (sample / background) accepted as shadow.
    n_components_max : int
        Maximum number of mixture components per pixel.
    background_ratio : float
        Cumulative weight cutoff for the components treated as background.
    var_init : float
        Variance of newly spawned components.
    var_min, var_max : float or None
        Variance clamp; ``var_max`` defaults to ``5 * var_init``.
    min_weight : float
        Components whose weight decays below this are dropped.
    detect_shadows : bool
        Whether dark foreground pixels may be relabelled as shadow.

    Attributes
    ----------
    weights_ : ndarray of shape (n_components_max, H*W)
        Component-major so the leading component of every pixel is contiguous.
    means_ : ndarray of shape (n_components_max, H*W, 3)
    variances_ : ndarray of shape (n_components_max, H*W)
    n_live_ : ndarray of shape (H*W,)
    n_frames_seen_ : int
    frame_shape_ : tuple (H, W)
    """

    def __init__(
        self,
        history=100,
        var_threshold=25.0,
        shadow_ratio=0.5,
        n_components_max=5,
        background_ratio=0.75,
        var_init=225.0,
        var_min=4.0,
        var_max=None,
        min_weight=0.01,
        detect_shadows=True,
    ):
        self.history = history
        self.var_threshold = var_threshold
        self.shadow_ratio = shadow_ratio
        self.n_components_max = n_components_max
        self.background_ratio = background_ratio
        self.var_init = var_init
        self.var_min = var_min
        self.var_max = var_max
        self.min_weight = min_weight
        self.detect_shadows = detect_shadows

    def _check_params(self):
        check_positive_int(self.history, "history")
        check_positive_int(self.n_components_max, "n_components_max")
        check_positive_float(self.var_threshold, "var_threshold")
        check_positive_float(self.var_init, "var_init")
        check_positive_float(self.var_min, "var_min")
        check_positive_float(self.min_weight, "min_weight")
        check_open_interval(self.shadow_ratio, "shadow_ratio", 0.0, 1.0)
        check_open_interval(self.background_ratio, "background_ratio", 0.0, 1.0, closed_high=True)
        var_max = 5.0 * self.var_init if self.var_max is None else float(self.var_max)
        if var_max < self.var_min:
            raise ValueError("var_max must be >= var_min")
        return var_max

    def _initialize(self, shape):
        h, w = shape
        k = self.n_components_max
        self.frame_shape_ = (h, w)
        self.weights_ = np.zeros((k, h * w), dtype=np.float64)
        self.means_ = np.zeros((k, h * w, 3), dtype=np.float64)
        self.variances_ = np.zeros((k, h * w), dtype=np.float64)
        self.n_live_ = np.zeros(h * w, dtype=np.int64)
        self.n_frames_seen_ = 0

    def apply(self, image) -> np.ndarray:
        """Classify ``image`` against the current model, then update the model.

        Returns an ``(H, W)`` uint8 label mask with values
        ``BACKGROUND`` (0), ``FOREGROUND`` (1) and ``SHADOW`` (2).
        """
        var_max = self._check_params()
        image = check_image(image)
        if not hasattr(self, "weights_"):
            self._initialize(image.shape[:2])
        elif image.shape[:2] != self.frame_shape_:
            raise ValueError(
                f"frame shape {image.shape[:2]} differs from model shape {self.frame_shape_}"
            )
        self.n_frames_seen_ += 1
        alpha = 1.0 / min(self.n_frames_seen_, self.history)
        labels = np.empty(image.shape[0] * image.shape[1], dtype=np.uint8)
        _update_kernel(
            image.reshape(-1, 3), self.weights_, self.means_, self.variances_, self.n_live_,
            labels, alpha, float(self.var_threshold), float(self.background_ratio),
            float(self.shadow_ratio), float(self.var_init), float(self.var_min), var_max,
            float(self.min_weight), bool(self.detect_shadows),
        )
        return labels.reshape(self.frame_shape_)

    def partial_fit(self, image, y=None):
        self.apply(image)
        return self

    def fit(self, images, y=None):
        """Reset the model and learn from a sequence of frames."""
        for attr in ("weights_", "means_", "variances_", "n_live_", "n_frames_seen_", "frame_shape_"):
            self.__dict__.pop(attr, None)
        for image in images:
            self.apply(image)
        return self

    def background_image(self) -> np.ndarray:
        """Mean of each pixel's highest-weight component, rounded half up to uint8."""
        check_is_fitted(self, "weights_")
        h, w = self.frame_shape_
        out = np.empty((h * w, 3), dtype=np.uint8)
        _top_means(self.means_, out)
        return out.reshape(h, w, 3)

    def clone_state(self) -> "BackgroundSubtractor":
        """Deep copy of parameters and fitted state."""
        twin = type(self)(**self.get_params())
        if hasattr(self, "weights_"):
            twin.frame_shape_ = self.frame_shape_
            twin.n_frames_seen_ = self.n_frames_seen_
            twin.weights_ = self.weights_.copy()
            twin.means_ = self.means_.copy()
            twin.variances_ = self.variances_.copy()
            twin.n_live_ = self.n_live_.copy()
        return twin


def set_num_threads(n: int) -> None:
    """Bound the worker threads used by the per-pixel kernel."""
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
