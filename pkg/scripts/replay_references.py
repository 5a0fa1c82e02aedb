"""Replay every reference policy on its experiment's validation batch and print the mean fitness."""

import numpy as np

from sympolicy.policies import LqgController
from sympolicy.reference_policies import all_reference_policies
from sympolicy.simulate import VALIDATION_BATCH, VALIDATION_STREAM, batch_fitness, make_batch


def main():
    for eid, kind, pol in all_reference_policies():
        batch = make_batch(eid, VALIDATION_BATCH, 0, VALIDATION_STREAM)
        fit, status = batch_fitness(pol, batch)
        line = f"{eid:16s} {kind:8s} {fit.mean():12.2f}  statuses {np.bincount(status, minlength=4).tolist()}"
        if kind == "dynamic" and batch.experiment.env == "sho":
            lqg = batch_fitness(LqgController(batch.experiment), batch)[0].mean()
            line += f"  lqg {lqg:.2f}"
        print(line)


if __name__ == "__main__":
    main()
