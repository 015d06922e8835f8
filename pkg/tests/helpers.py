import itertools
import numpy as np


def check_block_symmetry(kernel, samples, trials, rng):
    """True when permuting indices inside any block never changes the kernel value"""
    for _ in range(trials):
        blocks = [np.sort(rng.choice(n, size=d, replace=False)) for n, d in zip(samples.sizes, kernel.degrees)]
        base = kernel.evaluate(samples, tuple(tuple(b.tolist()) for b in blocks))
        for k, block in enumerate(blocks):
            for perm in itertools.permutations(block.tolist()):
                shuffled = [b.reshape(1, -1) for b in blocks]
                shuffled[k] = np.asarray(perm, dtype=np.int64).reshape(1, -1)
                if not np.isclose(kernel.evaluate_batch(samples, shuffled)[0], base, rtol=0, atol=1e-12):
                    return False
    return True
