"""Two-pass reference for one DAT step: record each loss's gradients separately, then apply the rules by hand."""

import copy

import numpy as np

from datlab import autodiff as ad
from datlab.nets import domain_loss, forward_classifier, forward_generator, forward_task, task_loss


def hand_rule(theta_g, g_r, g_c, alpha, lam):
    return theta_g - alpha * (g_r - lam * g_c)


def _grads(loss, params):
    ad.zero_grad(params)
    ad.backward(loss)
    return [p.grad.copy() for p in params]


def hand_composed_step(model, batch, alpha, lam):
    """Parameter values after one step, from two independent backward passes without reversal."""
    m = copy.deepcopy(model)
    gp, cp, rp = m.generator.parameters(), m.domain_classifier.parameters(), m.task_net.parameters()

    z = forward_generator(m.generator, batch.x)
    l_r = task_loss(forward_task(m.task_net, z, m.domain_feature_node(batch.domain_ids)), batch.y)
    gr = _grads(l_r, gp + rp)
    dlr_dg, dlr_dr = gr[:len(gp)], gr[len(gp):]

    z = forward_generator(m.generator, batch.x)
    l_c = domain_loss(forward_classifier(m.domain_classifier, z), batch.domain_targets)
    gc = _grads(l_c, gp + cp)
    dlc_dg, dlc_dc = gc[:len(gp)], gc[len(gp):]

    new_g = [hand_rule(p.value, a, b, alpha, lam) for p, a, b in zip(gp, dlr_dg, dlc_dg)]
    new_c = [p.value - alpha * g for p, g in zip(cp, dlc_dc)]
    new_r = [p.value - alpha * g for p, g in zip(rp, dlr_dr)]
    return new_g, new_c, new_r, float(l_r.value), float(l_c.value)


def max_param_diff(model, new_g, new_c, new_r):
    pairs = zip(model.generator.parameters() + model.domain_classifier.parameters() + model.task_net.parameters(),
                new_g + new_c + new_r)
    return max(float(np.max(np.abs(p.value - v))) for p, v in pairs)
