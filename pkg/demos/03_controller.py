"""
A REINFORCE controller finds the loss maximizer
===============================================

On a stationary loss table the controller's optimum puts all mass on the
highest-loss policy. Watch the probabilities move for a three-entry table,
then for a harder table where the two best entries differ by only 0.1.
"""
import numpy as np

from augarena.selector import (
    CONVERGENCE_STEPS_EASY,
    CONVERGENCE_STEPS_GAP_0_1,
    ControllerState,
    controller_sample,
    controller_update,
)


def run(losses, seed, budget, report_every=None):
    ids = np.arange(len(losses))
    state = ControllerState(ids)
    rng = np.random.default_rng(seed)
    best = int(np.argmax(losses))
    for step in range(1, budget + 1):
        pid = controller_sample(state, rng)
        state = controller_update(state, pid, losses[pid])
        if report_every and step % report_every == 0:
            print(f"  step {step:4d}  p = {np.round(state.probs, 3)}")
        if state.prob_of(best) > 0.9:
            return step
    return None


print("table {1, 2, 3}, seed 0:")
steps = run([1.0, 2.0, 3.0], 0, CONVERGENCE_STEPS_EASY, report_every=40)
print(f"  p(argmax) > 0.9 after {steps} steps (budget {CONVERGENCE_STEPS_EASY})\n")

steps = [run([1.0, 2.0, 3.0], s, CONVERGENCE_STEPS_EASY) for s in range(20)]
print("steps over 20 seeds:", steps)

gap = [0.4, 2.0, 1.1, 2.1, 0.9]
steps = [run(gap, s, CONVERGENCE_STEPS_GAP_0_1) for s in range(10)]
print(f"table {gap} (gap 0.1) over 10 seeds:", steps, f"(budget {CONVERGENCE_STEPS_GAP_0_1})")
