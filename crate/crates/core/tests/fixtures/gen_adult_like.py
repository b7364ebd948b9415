"""Writes adult_like.csv: a small census-style table with two standardized
numeric columns, one categorical column, a string sensitive attribute and a
string income label. Pure stdlib so the output is reproducible anywhere."""
import csv
import math
import random

N = 3000
rng = random.Random(20240611)
EDU = ["bachelors", "hs-grad", "masters", "some-college"]
EDU_EFFECT = {"bachelors": 0.6, "hs-grad": -0.5, "masters": 1.0, "some-college": 0.0}

with open("adult_like.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["age", "hours_per_week", "education", "sex", "income"])
    for _ in range(N):
        male = rng.random() < 0.6
        age = rng.gauss(0.0, 1.0)
        hours = rng.gauss(0.35 if male else -0.5, 1.0)
        weights = [0.25, 0.35, 0.1, 0.3] if male else [0.2, 0.4, 0.08, 0.32]
        edu = rng.choices(EDU, weights)[0]
        logit = -1.0 + 0.9 * age + 0.7 * hours + EDU_EFFECT[edu] + (0.6 if male else 0.0)
        rich = rng.random() < 1.0 / (1.0 + math.exp(-logit))
        w.writerow([f"{age:.6f}", f"{hours:.6f}", edu, "Male" if male else "Female", ">50K" if rich else "<=50K"])
