"""Synthetic Chinese restaurant reviews with known labels.

Each mentioned aspect contributes one clause built from a keyword for the
aspect and a phrase for its polarity.  The star rating follows the mean
polarity, so the corpus is learnable for both tasks.  Reviews pass the default
curation filters.
"""

from __future__ import annotations

import numpy as np

from .corpus import Dataset, Review, count_chinese
from .taxonomy import AspectTaxonomy, Polarity, default_taxonomy

ASPECT_KEYWORDS = {
    "Food#Taste": "菜的口味",
    "Food#Appearance": "菜品外观",
    "Food#Portion": "菜的分量",
    "Food#Recommend": "招牌菜",
    "Price#Level": "价格水平",
    "Price#Cost_effective": "性价比",
    "Price#Discount": "折扣力度",
    "Location#Downtown": "商圈位置",
    "Location#Transportation": "交通",
    "Location#Easy_to_find": "门店位置",
    "Service#Queue": "排队时间",
    "Service#Hospitality": "服务员态度",
    "Service#Parking": "停车",
    "Service#Timely": "上菜速度",
    "Ambience#Decoration": "装修",
    "Ambience#Noise": "店里环境",
    "Ambience#Space": "就餐空间",
    "Ambience#Sanitary": "卫生情况",
}

POLARITY_PHRASES = {
    Polarity.POSITIVE: ("非常好，我们都特别满意", "真的很棒，值得称赞"),
    Polarity.NEUTRAL: ("一般般吧，说不上好坏", "还行，算是中规中矩"),
    Polarity.NEGATIVE: ("太差了，让人非常失望", "很糟糕，以后不会再来"),
}

FILLERS = (
    "周末和朋友一起来这家餐厅吃晚饭",
    "这是我们第二次来这里聚餐了",
    "听同事推荐专门过来尝一尝",
    "中午下班以后顺路过来吃个饭",
)

CLOSINGS = (
    "总体来说就是这样的感受",
    "以上是我这次用餐的真实体验",
    "大家可以参考一下我的评价",
)


def _keyword(name: str) -> str:
    return ASPECT_KEYWORDS.get(name, name.split("#")[-1])


def synthetic_reviews(n: int, seed: int = 0, taxonomy: AspectTaxonomy | None = None, max_aspects: int = 4,
                      split: str = "unsplit", min_chinese: int = 50) -> Dataset:
    taxonomy = taxonomy or default_taxonomy()
    rng = np.random.default_rng(seed)
    pols = [Polarity.NEGATIVE, Polarity.NEUTRAL, Polarity.POSITIVE]
    reviews = []
    for k in range(n):
        count = int(rng.integers(1, min(max_aspects, taxonomy.n) + 1))
        chosen = sorted(rng.choice(taxonomy.n, size=count, replace=False).tolist())
        labels = [None] * taxonomy.n
        clauses = [FILLERS[int(rng.integers(len(FILLERS)))]]
        for i in chosen:
            pol = pols[int(rng.integers(3))]
            labels[i] = pol
            phrase = POLARITY_PHRASES[pol][int(rng.integers(2))]
            clauses.append(f"{_keyword(taxonomy.names[i])}{phrase}")
        tail = 0
        while count_chinese("".join(clauses)) < min_chinese:
            clauses.append(CLOSINGS[tail % len(CLOSINGS)])
            tail += 1
        mean = float(np.mean([int(labels[i]) for i in chosen]))
        rating = int(np.clip(np.floor(3 + 2 * mean + 0.5), 1, 5))
        text = "。".join(clauses) + "。"
        reviews.append(Review(id=f"syn{k:05d}", text=text, rating=rating, labels=tuple(labels)))
    return Dataset(tuple(reviews), split, taxonomy)
