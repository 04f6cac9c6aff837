import pytest
import torch

from blacksmith.model import ImageBatch, ViTConfig, build_model

torch.set_num_threads(1)


@pytest.fixture
def toy_cfg():
    # depth 4 (l = 2), 2x2 patches of a 4x4 image -> 5 tokens
    return ViTConfig(image_size=4, patch_size=2, in_channels=3, embed_dim=16, depth=4,
                     num_heads=2, mlp_ratio=2.0, num_classes=3, precision="fp64")


@pytest.fixture
def toy_model(toy_cfg):
    return build_model(toy_cfg, seed=3)


def make_batch(cfg, n=4, seed=0, dtype=None):
    g = torch.Generator().manual_seed(seed)
    pixels = torch.rand((n, cfg.in_channels, cfg.image_size, cfg.image_size), generator=g,
                        dtype=dtype or cfg.dtype)
    labels = torch.randint(cfg.num_classes, (n,), generator=g)
    return ImageBatch(pixels, labels)


@pytest.fixture
def toy_batch(toy_cfg):
    return make_batch(toy_cfg)


def small_fp32_cfg(depth=4, **kw):
    base = dict(image_size=8, patch_size=4, embed_dim=16, depth=depth, num_heads=2, num_classes=4)
    base.update(kw)
    return ViTConfig(**base)


# -- acceptance reporting ---------------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "text")`` get one PASS/FAIL line each
# in the terminal summary; ``note`` attaches measured values to that line.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion check")


@pytest.fixture
def note(request):
    notes = []
    request.node._criterion_notes = notes
    return notes.append


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and (report.when == "call" or report.failed):
        n, text = mark.args
        prev_ok, _, prev = _CRITERIA.get(n, (True, text, ""))
        detail = "; ".join(filter(None, [prev, *getattr(item, "_criterion_notes", [])]))
        _CRITERIA[n] = (prev_ok and report.passed, text, detail)
    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, text, detail = _CRITERIA[n]
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
