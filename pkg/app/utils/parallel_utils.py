"""
並列評価ユーティリティモジュール
独立なタスク（包絡線表の格子点など）をスレッドプールで評価し、添字順に集約する
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

from app.config.constants import MAX_WORKERS_THREAD_POOL, THREAD_TIMEOUT_SECONDS

logger = logging.getLogger(__name__)


def evaluate_parallel(
    task: Callable,
    arguments: Sequence,
    max_workers: int = MAX_WORKERS_THREAD_POOL,
) -> list:
    """
    複数の引数に対して task を並列評価する

    Args:
        task: 1引数の関数
        arguments: 各タスクの引数列

    Returns:
        list: arguments と同じ順序の結果リスト（失敗したタスクは None）
    """
    results = [None] * len(arguments)
    if max_workers <= 1:
        for index, argument in enumerate(arguments):
            results[index] = _run_task(task, argument, index)
        return results

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = {}
        for index, argument in enumerate(arguments):
            futures[index] = executor.submit(task, argument)

        # 結果を添字順に収集する（実行順によらず出力が再現される）
        for index, future in futures.items():
            try:
                results[index] = future.result(timeout=THREAD_TIMEOUT_SECONDS)
            except Exception as e:
                logger.warning(f"Task {index} failed: {e}")
                results[index] = None

    return results


def _run_task(task: Callable, argument, index: int):
    try:
        return task(argument)
    except Exception as e:
        logger.warning(f"Task {index} failed: {e}")
        return None
