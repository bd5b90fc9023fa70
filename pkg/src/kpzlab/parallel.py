"""
レプリカの並列実行

SeedSequence.spawn でレプリカごとに独立な乱数ストリームを作り、
スレッドプールで関数を写像する。numba カーネルは GIL を解放する。
"""

import concurrent.futures as cf
import logging
import os
from typing import Callable, List, Optional, TypeVar

import numpy as np
from tqdm.auto import tqdm

from .dynamics import SeedLike

logger = logging.getLogger(__name__)

T = TypeVar("T")

THREADS_ENV = "KPZLAB_THREADS"


def thread_count(requested: Optional[int] = None) -> int:
    """スレッド数。引数、環境変数 KPZLAB_THREADS、CPU 数の順に決める"""
    if requested is not None and requested > 0:
        return requested
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            logger.warning("%s の値が整数ではありません: %s", THREADS_ENV, env)
        else:
            if value > 0:
                return value
    return os.cpu_count() or 1


def replica_seeds(seed: SeedLike, count: int) -> List[np.random.SeedSequence]:
    """レプリカごとの SeedSequence"""
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    elif isinstance(seed, np.random.Generator):
        root = np.random.SeedSequence(int(seed.integers(0, 2**63)))
    else:
        root = np.random.SeedSequence(seed)
    return root.spawn(count)


def map_replicas(
    fn: Callable[[np.random.Generator, int], T],
    count: int,
    seed: SeedLike = 0,
    threads: Optional[int] = None,
    progress: bool = True,
    desc: str = "replicas",
) -> List[T]:
    """
    fn(rng, i) を count 個のレプリカで評価する

    結果はレプリカ番号の順に並び、スレッド数によらずシードだけで決まる。

    Args:
        fn: 乱数生成器とレプリカ番号を受け取る関数
        count: レプリカ数
        seed: 親シード
        threads: スレッド数（None なら KPZLAB_THREADS か CPU 数）
        progress: tqdm の進捗バーを表示するか
        desc: 進捗バーの見出し

    Returns:
        レプリカ順の結果リスト
    """
    seeds = replica_seeds(seed, count)
    workers = min(thread_count(threads), max(count, 1))
    results: List[Optional[T]] = [None] * count
    bar = tqdm(total=count, desc=desc, disable=not progress, leave=False)
    try:
        if workers == 1:
            for i, ss in enumerate(seeds):
                results[i] = fn(np.random.Generator(np.random.PCG64(ss)), i)
                bar.update(1)
        else:
            with cf.ThreadPoolExecutor(max_workers=workers) as ex:
                futures = {
                    ex.submit(fn, np.random.Generator(np.random.PCG64(ss)), i): i for i, ss in enumerate(seeds)
                }
                for fut in cf.as_completed(futures):
                    results[futures[fut]] = fut.result()
                    bar.update(1)
    finally:
        bar.close()
    return results
