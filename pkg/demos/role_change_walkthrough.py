"""
One online role change iteration, step by step
==============================================

A four-network ladder sees one mini-batch. The pool networks are ranked by
cross-entropy, the best one is promoted to temporary teacher, the remaining
students contribute their hardest examples to a feedback subset, and the
pivot is fine-tuned on a mixup blend of batch and feedback before the
teachers distill into the students.
"""

import numpy as np

from orckd.data import make_synthetic
from orckd.nets import NetSpec, make_ladder
from orckd.scheduler import GroupState
from orckd.trainer import OptimizerState, OrcOptions, orc_iteration, pretrain_pivot

data = make_synthetic("blobs", 2000, 5, noise=1.0, seed=0, dim=4, clusters=2)
widths = (48, 32, 24, 16)
ladder = make_ladder([NetSpec("mlp", 3, w, 5, (4,), i) for i, w in enumerate(widths)])
for i, net in enumerate(ladder.networks):
    print(f"network {i}: width {widths[i]:>2}, {net.param_count():>5} parameters")

# the pivot starts from a converged-ish state
record = pretrain_pivot(ladder.pivot, data, 10)
print(f"pivot pretrained: train accuracy {record.train_accuracy:.3f}")

opts = {i: OptimizerState.for_network(n) for i, n in enumerate(ladder.networks)}
state = GroupState.initial(len(ladder))
batch = (data.images[:64], data.labels[:64])
state, report = orc_iteration(ladder, state, batch, opts, OrcOptions(k=1), np.random.default_rng(0))

print("\nmean CE per pool network:", {i: round(report.mean_ce[i], 4) for i in report.student_ids + report.temp_ids})
print("temporary teacher:", report.temp_ids)
print("students:", report.student_ids)
print("control weights:", np.round(report.control_weights, 4))
print("feedback slots per student:", report.counts.tolist(), "(sums to the batch size)")
print("distinct feedback instances:", len(set(report.feedback_indices.tolist())))
print(f"mixup ratio: {report.lam:.4f}")
print("losses:", {k: round(v, 4) for k, v in report.losses.items()})
print("optimizer steps this iteration:", report.steps)
print("temporary set after demotion:", state.temp_teacher_ids)
