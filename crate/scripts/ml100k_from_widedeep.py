#!/usr/bin/env python3
"""Convert the MovieLens-100k copy bundled in the pytorch-widedeep wheel to `::` files.

    pip download pytorch-widedeep==1.7.0 --no-deps -d /tmp/pwd
    python3 scripts/ml100k_from_widedeep.py /tmp/pwd/pytorch_widedeep-1.7.0-*.whl data/ml-100k

Writes ratings.dat (user::item::rating::timestamp) and movies.dat (item::title::genres).
Needs pandas with a parquet engine (pyarrow).
"""
import io
import sys
import zipfile
from pathlib import Path

import pandas as pd

PREFIX = "pytorch_widedeep/datasets/data/MovieLens100k_"


def main(wheel: str, out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        ratings = pd.read_parquet(io.BytesIO(z.read(PREFIX + "data.parquet.brotli")))
        items = pd.read_parquet(io.BytesIO(z.read(PREFIX + "items.parquet.brotli")))

    with open(out / "ratings.dat", "w") as f:
        for r in ratings.itertuples(index=False):
            f.write(f"{r.user_id}::{r.movie_id}::{r.rating}::{r.timestamp}\n")

    genre_cols = items.columns[5:]
    with open(out / "movies.dat", "w", encoding="latin-1", errors="replace") as f:
        for _, r in items.iterrows():
            genres = "|".join(c for c in genre_cols if r[c] == 1)
            f.write(f"{r.movie_id}::{r.movie_title}::{genres}\n")
    print(f"{len(ratings)} ratings, {len(items)} movies -> {out}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
