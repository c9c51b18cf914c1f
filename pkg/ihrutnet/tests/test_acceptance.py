"""Secondary acceptance criteria, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import numpy as np
import torch

import ihikit as ik
from ihikit import reconstruct as ikrec

from ihrutnet import IhiDataset, SpeBlock, TrainConfig, train
from ihrutnet.server import BridgeServer
from ihrutnet.train import psnr

from test_spe import central_difference_grads


def report(name, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'}: {name} ({detail})")
    assert ok, f"{name}: {detail}"


def test_criterion_spe_gradient_check():
    """Analytic gradients match central finite differences to 1e-4 relative
    in 64-bit."""
    torch.manual_seed(0)
    block = SpeBlock(4, 3).double()
    x = torch.randn(1, 4, 6, 7, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(1, 3, 6, 7, dtype=torch.float64)
    (block(x) * weight).sum().backward()
    numeric = central_difference_grads(block, x.detach().clone(), weight)
    rel = float((x.grad - numeric).abs().max() / x.grad.abs().max())
    report("SPE gradient check", rel <= 1e-4, f"max rel err {rel:.2e}")


def test_criterion_spe_attention_constant_along_h():
    """The attention map carries no H dimension and rescales every row of a
    column identically, for randomized inputs, exactly."""
    torch.manual_seed(1)
    block = SpeBlock(5, 5).eval()
    ok = True
    for trial in range(5):
        x = torch.randn(2, 5, 11, 9)
        with torch.no_grad():
            attn = block.attention(x)
            feat = block.embed(x)
            manual = block.proj(feat * attn)
            out = block(x)
        ok = ok and attn.shape[2] == 1 and torch.equal(out, manual)
    report("SPE attention constant along H", ok, "5 randomized inputs, exact")


def test_criterion_overfit_and_heldout_ordering(dataset, trained, tmp_path):
    """One desk sample overfits to >= 35 dB within 2000 steps, and the
    trained model beats the dark-subtracted pseudo-inverse baseline on
    held-out scenes."""
    one = dataset.split("train")[:1]
    cfg = TrainConfig(epochs=10**6, max_steps=2000, lr=2e-4, warmup_steps=30,
                      seed=0, val_every=10**6)
    model, curves = train(dataset, cfg, tmp_path / "overfit",
                          train_samples=one, val_samples=one, stop_at_psnr=35.0)
    with torch.no_grad():
        train_psnr = psnr(model(one[0].y[None])[0], one[0].gt)
    steps = len(curves["loss"])
    ok_overfit = train_psnr >= 35.0 and steps <= 2000
    ok_first50 = curves["loss"][min(49, steps - 1)] < curves["loss"][0]

    ops = dataset.operators()
    held = dataset.split("test")
    net = trained["model"]
    margins = []
    for s in held:
        with torch.no_grad():
            p_net = psnr(net(s.y[None])[0], s.gt)
        p_base = psnr(ops.apply_inverse(s.y[None])[0], s.gt)
        margins.append(p_net - p_base)
    ok_held = all(m > 0 for m in margins)
    report("overfit + held-out ordering",
           ok_overfit and ok_first50 and ok_held,
           f"overfit {train_psnr:.2f} dB in {steps} steps; "
           f"held-out margins over F' baseline: "
           + ", ".join(f"{m:+.2f} dB" for m in margins))


def test_criterion_bridge_integration(dataset, dataset_dir, trained):
    """The producer's unfolding loop runs 5 stages against the served prior
    and returns finite output; echo mode matches the identity prior
    exactly."""
    params = ik.load_params(dataset_dir / "params")
    ops = ikrec.Operators.build(params)
    y = ik.read_cube(dataset_dir / "test" /
                     f"{dataset.split('test')[0].sample_id}.interf.ihic")

    with BridgeServer("127.0.0.1", 0, mode="echo") as server:
        ext = ikrec.unfold(y, params,
                           ik.UnfoldConfig(stages=3, prior="external",
                                           prior_params={"endpoint": f"127.0.0.1:{server.port}"}),
                           ops=ops)
    ident = ikrec.unfold(y, params, ik.UnfoldConfig(stages=3, prior="identity"),
                         ops=ops)
    echo_exact = np.array_equal(ext.spectrum.data, ident.spectrum.data)

    with BridgeServer("127.0.0.1", 0, mode="prior",
                      checkpoint=str(trained["dir"] / "checkpoint.pt")) as server:
        served = ikrec.unfold(
            y, params,
            ik.UnfoldConfig(stages=5, prior="external",
                            prior_params={"endpoint": f"127.0.0.1:{server.port}",
                                          "timeout": 60.0}),
            ops=ops)
    finite = bool(np.all(np.isfinite(served.hsi.data))) and len(served.trace) == 6
    report("bridge integration", echo_exact and finite,
           f"echo exact {echo_exact}; served 5-stage unfold finite {finite}")
