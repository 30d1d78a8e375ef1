import numpy as np
import pytest

from poolhide import data


@pytest.fixture(scope="session")
def blobs():
    return data.synthetic_blobs(600, seed=11)


def random_batch(spec, n, seed):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(n, spec.input_dim))
    if spec.loss == "cross_entropy":
        y = gen.integers(0, spec.output_dim, size=n)
    else:
        y = gen.uniform(size=(n, spec.output_dim))
    return X, y


def equivalence_gaps(spec, train, optimizer, epochs, batch_size, seed=0, init_seed=0):
    """Per-step max |pool - directly trained params| for a lone Option-I carrier task."""
    from poolhide import nn, parampool as pp, trainer as tr
    from poolhide.nn import KINDS

    model = nn.init_params(spec, init_seed)
    pool = pp.init_from_model(model)
    k = pp.SecretKey(0, spec.arch_id, pool.sizes)
    task = tr.TaskSpec("carrier", "carrier", spec, k, train, train, optimizer)
    cfg = tr.TrainConfig(max_epochs=epochs, batch_size=batch_size, seed=seed, early_stop=False)

    hidden = []
    tr.train_joint([task], pool, cfg, on_step=lambda step, p: hidden.append(
        np.concatenate([p.groups[kd] for kd in KINDS])))
    direct = []
    tr.train_model(model, train, optimizer, epochs, batch_size, tr.task_stream_seed(seed, 0),
                   on_step=lambda step, m: direct.append(m.flatten()))
    assert len(hidden) == len(direct)
    return [float(np.max(np.abs(h - d))) for h, d in zip(hidden, direct)]


_criteria = {}


@pytest.fixture
def record_criterion():
    """Log a PASS/FAIL line for an acceptance criterion; shown in the terminal summary."""
    def record(number, ok, detail):
        _criteria[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_criteria[number])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criteria, key=lambda k: (int(str(k).split()[0]), str(k))):
            terminalreporter.write_line(_criteria[number])
