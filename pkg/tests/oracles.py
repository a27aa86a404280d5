"""Independent brute-force reference implementations used by the tests."""

from itertools import permutations


def tau_bruteforce(pred, truth):
    n = len(truth)
    conc = disc = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            # ordered pairs, each unordered pair counted twice
            a, b = truth[i], truth[j]
            same = (pred.index(a) < pred.index(b)) == (i < j)
            conc += same
            disc += not same
    return (conc - disc) / (n * (n - 1))


def pairacc_bruteforce(scores, ranking):
    n = len(scores)
    total = good = 0
    for i in range(n):
        for j in range(n):
            if ranking.index(i) < ranking.index(j):
                total += 1
                good += scores[i] > scores[j]
    return good / total


def best_bruteforce(scores, truth_best):
    top = max(scores)
    first = min(k for k in range(len(scores)) if scores[k] == top)
    return int(first == truth_best)


def all_permutations(n):
    return [list(p) for p in permutations(range(n))]
