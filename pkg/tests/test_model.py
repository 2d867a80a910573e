import numpy as np
import pytest

from lpgnet.errors import ContractError
from lpgnet.model import Ablation, LpgNet
from lpgnet.rng import generator
from lpgnet.tensor import no_grad

from .conftest import random_batch

VARIANTS = ["no_inter_attention", "no_intra_attention", "no_ffn", "no_dual_gate", "text_only", "audio_only"]


def model(ablation=None, **kw):
    return LpgNet(6, 5, 4, d=8, rng=generator(0, "init"), ablation=ablation, **kw).eval()


def logits(m, batch):
    with no_grad():
        return m.forward(batch).logits.data


def test_ablation_validation():
    with pytest.raises(ContractError):
        Ablation(text_only=True, audio_only=True)
    with pytest.raises(ContractError):
        Ablation(no_inter_attention=True, no_intra_attention=True)
    with pytest.raises(ContractError):
        Ablation.from_names(["no_such_thing"])
    assert Ablation.from_names(["none"]).label == "full"
    assert Ablation.from_names(["no_ffn", "text_only"]).label == "no_ffn+text_only"


@pytest.mark.parametrize("name", VARIANTS)
def test_ablations_keep_parameter_shapes(name):
    full = {n: p.shape for n, p in model().named_parameters()}
    ablated = {n: p.shape for n, p in model(Ablation.from_names([name])).named_parameters()}
    assert full == ablated


@pytest.mark.parametrize("name", VARIANTS)
def test_every_ablation_changes_the_output(name):
    batch = random_batch(0, [3, 2])
    assert not np.allclose(logits(model(), batch), logits(model(Ablation.from_names([name])), batch))


def test_path_selection():
    batch = random_batch(0, [3, 2])
    out = model(Ablation(no_inter_attention=True)).forward(batch)
    assert out.lpia.x_at is None and out.lpia.x_ta is None and out.lpia.x_tt is not None
    out = model(Ablation(no_intra_attention=True)).forward(batch)
    assert out.lpia.x_tt is None and out.lpia.x_aa is None and out.lpia.x_at is not None


def test_text_only_ignores_audio():
    batch = random_batch(0, [3, 2])
    m = model(Ablation(text_only=True))
    ref = logits(m, batch)
    batch.audio_feats[:] = 1e3 * np.random.default_rng(0).standard_normal(batch.audio_feats.shape)
    assert np.array_equal(logits(m, batch), ref)


def test_audio_only_ignores_text():
    batch = random_batch(0, [3, 2])
    m = model(Ablation(audio_only=True))
    ref = logits(m, batch)
    batch.text_feats[:] = 0.0
    assert np.array_equal(logits(m, batch), ref)


def test_full_model_uses_both_modalities():
    batch = random_batch(0, [3, 2])
    m = model()
    ref = logits(m, batch)
    batch.audio_feats[:] = 0.0
    assert not np.allclose(logits(m, batch), ref)


def test_no_dual_gate_is_plain_average():
    batch = random_batch(0, [3, 2])
    m = model(Ablation(no_dual_gate=True))
    out = m.forward(batch)
    assert out.fused.alpha_t is None
    np.testing.assert_allclose(out.fused.f_final.data, 0.5 * (out.fused.t_fused.data + out.fused.a_fused.data),
                               rtol=0, atol=1e-15)


def test_alphas_sum_to_one():
    out = model().forward(random_batch(1, [4, 1, 2]))
    np.testing.assert_allclose(out.fused.alpha_t.data + out.fused.alpha_a.data, 1.0, rtol=0, atol=1e-12)


def test_students_are_training_only():
    batch = random_batch(0, [3, 2])
    with_students = model()
    without = model(students=False)
    assert np.array_equal(logits(with_students, batch), logits(without, batch))
    names = [n for n, _ in with_students.inference_parameters()]
    assert not any(n.startswith("student_") for n in names)
    assert [n for n, _ in without.named_parameters()] == names


def test_single_class_rejected():
    with pytest.raises(ContractError):
        LpgNet(6, 5, 1, d=8)


def test_unimodal_loss_has_single_student():
    bundle, _ = model(Ablation(text_only=True)).loss(random_batch(0, [3, 2]))
    assert bundle.ce_a.item() == 0.0 and bundle.kl_a.item() == 0.0 and bundle.ce_t.item() > 0
