"""scikit-learn style front ends: fit/predict estimators over the functional core."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import parampool as pp
from . import rng
from .analysis import otd, weight_histogram
from .data import Dataset, train_val_split
from .nn import forward, init_params, make_arch_id, arch_spec
from .stealing import NoiseSpec, StealTarget, build_memorization_task, make_noise, reconstruct
from .trainer import TaskSpec, TrainConfig, evaluate, task_stream_seed, train_joint, train_model


def _labels(y):
    check_classification_targets(y)
    classes, encoded = np.unique(y, return_inverse=True)
    return classes, encoded.astype(np.int64)


def _optimizer(kind, lr):
    return {"kind": kind, "lr": lr}


class FCNClassifier(ClassifierMixin, BaseEstimator):
    """Plain fully-connected classifier, used for independently trained baselines."""

    def __init__(self, hidden_layer_sizes=(200, 200), optimizer="sgd", learning_rate=0.1,
                 max_epochs=20, batch_size=64, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_enc = _labels(y)
        self.n_features_in_ = X.shape[1]
        sizes = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        spec = arch_spec(make_arch_id("fcn", sizes))
        model = init_params(spec, self.random_state)
        self.model_ = train_model(
            model, Dataset(X, y_enc), _optimizer(self.optimizer, self.learning_rate),
            self.max_epochs, self.batch_size, task_stream_seed(self.random_state, 0),
        )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return forward(self.model_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class NoiseMemorizer(BaseEstimator):
    """Generator that memorises ``M`` samples keyed by a seeded noise sequence.

    ``fit(X)`` takes the sensitive samples (rows in [0, 1]); ``reconstruct()``
    regenerates them from the noise seed alone.
    """

    def __init__(self, hidden_layer_sizes=(128,), noise_dim=16, noise_kind="gaussian", noise_seed=0,
                 learning_rate=0.003, max_steps=2000, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.noise_dim = noise_dim
        self.noise_kind = noise_kind
        self.noise_seed = noise_seed
        self.learning_rate = learning_rate
        self.max_steps = max_steps
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        target = StealTarget(X)
        sizes = [self.noise_dim, *self.hidden_layer_sizes, X.shape[1]]
        spec = arch_spec(make_arch_id("gen", sizes))
        self.noise_ = NoiseSpec(self.noise_kind, self.noise_dim, len(X), self.noise_seed)
        key = pp.SecretKey(0, spec.arch_id, tuple(spec.counts().values()), noise_seed=self.noise_seed)
        task = build_memorization_task(target, self.noise_, spec, key,
                                       optimizer=_optimizer("adam", self.learning_rate))
        self.model_ = train_model(init_params(spec, self.random_state), task.train, task.optimizer,
                                  self.max_steps, len(X), task_stream_seed(self.random_state, 0))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, Z):
        check_is_fitted(self, "model_")
        Z = check_array(Z, dtype=np.float64)
        return np.clip(forward(self.model_, Z), 0.0, 1.0)

    def reconstruct(self, noise_seed=None):
        check_is_fitted(self, "model_")
        noise = self.noise_
        if noise_seed is not None:
            noise = NoiseSpec(noise.kind, noise.dim, noise.count, noise_seed)
        return reconstruct(self.model_, noise)

    def noise(self):
        check_is_fitted(self, "noise_")
        return make_noise(self.noise_)


class ModelHider(ClassifierMixin, BaseEstimator):
    """Train a carrier classifier that secretly encodes further classifiers.

    ``fit(X, y, secrets=[(X1, y1), ...])`` trains the carrier on ``(X, y)``
    and one secret FCN per extra dataset, all through one shared pool.
    ``predict`` is the carrier; :meth:`secret_model` rebuilds secret ``k``
    from the published carrier and its key.

    ``pool_fraction=None`` initialises the pool from the carrier (offset 0).
    A float ``gamma`` builds a from-scratch pool holding ``gamma`` of the
    carrier's weights and biases, with a seeded carrier offset.
    """

    def __init__(self, hidden_layer_sizes=(200, 200), secret_hidden_layer_sizes=((150, 250),),
                 pool_fraction=None, permute=False, learning_rate=0.1, max_epochs=20, batch_size=64,
                 val_fraction=0.1, window=3, tol=0.002, early_stop=False, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.secret_hidden_layer_sizes = secret_hidden_layer_sizes
        self.pool_fraction = pool_fraction
        self.permute = permute
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.window = window
        self.tol = tol
        self.early_stop = early_stop
        self.random_state = random_state

    def _offset(self, k, size):
        return int(rng.derive(self.random_state, 0x0FF5E7, k) % max(size, 1))

    def fit(self, X, y, secrets=()):
        X, y = check_X_y(X, y, dtype=np.float64)
        if len(secrets) != len(self.secret_hidden_layer_sizes):
            raise ValueError(f"got {len(secrets)} secret datasets for "
                             f"{len(self.secret_hidden_layer_sizes)} secret architectures")
        self.classes_, y_enc = _labels(y)
        self.n_features_in_ = X.shape[1]
        seed = self.random_state
        cspec = arch_spec(make_arch_id("fcn", [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]))
        counts = cspec.counts()
        if self.pool_fraction is None:
            pool = pp.init_from_model(init_params(cspec, seed))
            carrier_v, carrier_permute = 0, False
        else:
            sizes = (max(1, int(self.pool_fraction * counts["weight"])),
                     max(1, int(self.pool_fraction * counts["bias"])), 0)
            pool = pp.init_from_scratch(sizes, seed)
            carrier_v, carrier_permute = self._offset(0, sizes[0]), self.permute
        sizes = pool.sizes
        cfg = TrainConfig(max_epochs=self.max_epochs, batch_size=self.batch_size, val_fraction=self.val_fraction,
                          window=self.window, tol=self.tol, seed=seed, early_stop=self.early_stop)
        opt = _optimizer("sgd", self.learning_rate)

        self.carrier_key_ = pp.SecretKey(carrier_v, cspec.arch_id, sizes, permute=carrier_permute)
        train, val = train_val_split(Dataset(X, y_enc), self.val_fraction, seed)
        tasks = [TaskSpec("carrier", "carrier", cspec, self.carrier_key_, train, val, opt)]
        self.secret_classes_, self.keys_ = [], []
        for k, ((Xs, ys), hidden) in enumerate(zip(secrets, self.secret_hidden_layer_sizes), start=1):
            Xs, ys = check_X_y(Xs, ys, dtype=np.float64)
            classes, ys_enc = _labels(ys)
            spec = arch_spec(make_arch_id("fcn", [Xs.shape[1], *hidden, len(classes)]))
            key = pp.SecretKey(self._offset(k, sizes[0]), spec.arch_id, sizes, permute=self.permute)
            s_train, s_val = train_val_split(Dataset(Xs, ys_enc), self.val_fraction, seed)
            tasks.append(TaskSpec(f"secret{k}", "functionality", spec, key, s_train, s_val, opt))
            self.secret_classes_.append(classes)
            self.keys_.append(key)

        self.pool_, self.log_ = train_joint(tasks, pool, cfg)
        self.carrier_ = pp.fill(self.pool_, cspec, self.carrier_key_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "carrier_")
        return forward(self.carrier_, check_array(X, dtype=np.float64))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def decode(self, carrier=None, fusion="first-nonzero"):
        """Pool recovered from the published carrier (or a post-processed copy of it)."""
        check_is_fitted(self, "carrier_")
        return pp.decode(self.carrier_ if carrier is None else carrier, self.carrier_key_, fusion)

    def secret_model(self, k, carrier=None, fusion="first-nonzero"):
        return pp.assemble(self.decode(carrier, fusion), self.keys_[k])

    def predict_secret(self, k, X, carrier=None, fusion="first-nonzero"):
        model = self.secret_model(k, carrier, fusion)
        out = forward(model, check_array(X, dtype=np.float64))
        return self.secret_classes_[k][np.argmax(out, axis=1)]

    def score_secret(self, k, X, y, carrier=None, fusion="first-nonzero"):
        return float(np.mean(self.predict_secret(k, X, carrier, fusion) == np.asarray(y)))


class WeightHistogramTransformer(TransformerMixin, BaseEstimator):
    """Maps each row (a flat parameter vector) to its normalized weight histogram."""

    def __init__(self, n_bins=100, lo=-1.0, hi=1.0):
        self.n_bins = n_bins
        self.lo = lo
        self.hi = hi

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X, dtype=np.float64).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        return np.stack([weight_histogram(row, self.n_bins, self.lo, self.hi).masses for row in X])

    def pairwise_distances(self, X):
        """OTD matrix between the rows of ``X``."""
        X = check_array(X, dtype=np.float64)
        hists = [weight_histogram(row, self.n_bins, self.lo, self.hi) for row in X]
        k = len(hists)
        out = np.zeros((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                out[i, j] = out[j, i] = otd(hists[i], hists[j])
        return out
