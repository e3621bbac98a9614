"""Small synthetic corpora with clustered tastes and long-tailed item popularity."""

from __future__ import annotations

import numpy as np

from .dataio import RatingsTable


def skewed_corpus(n_users: int = 300, n_items: int = 120, n_groups: int = 6,
                  per_user: int = 30, zipf: float = 1.0, seed: int = 0) -> RatingsTable:
    """Ratings in 1..5 with timestamps.

    Items belong to taste groups; each user prefers one group. Draw
    probabilities are item popularity (power law with exponent ``zipf``)
    times a boost for the user's group. Ratings above 3 mark liked items.
    """
    rng = np.random.default_rng(seed)
    popularity = 1.0 / np.arange(1, n_items + 1) ** zipf
    popularity = popularity[rng.permutation(n_items)]
    item_group = rng.integers(n_groups, size=n_items)
    users, items, ratings, stamps = [], [], [], []
    for u in range(n_users):
        group = rng.integers(n_groups)
        weight = popularity * np.where(item_group == group, 8.0, 1.0)
        chosen = rng.choice(n_items, size=per_user, replace=False, p=weight / weight.sum())
        liked = item_group[chosen] == group
        score = np.where(liked, rng.integers(4, 6, size=per_user), rng.integers(1, 6, size=per_user))
        times = np.sort(rng.integers(0, 10**6, size=per_user))
        for i, s, t in zip(chosen, score, times):
            users.append(f"u{u}")
            items.append(f"i{i}")
            ratings.append(float(s))
            stamps.append(int(t))
    return RatingsTable(users, items, np.asarray(ratings), np.asarray(stamps, dtype=np.int64))
