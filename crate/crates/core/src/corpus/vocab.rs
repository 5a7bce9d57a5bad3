//! Word lists and knobs for the synthetic review carrier text.

use serde::{Deserialize, Serialize};

const POSITIVE: &[&str] = &[
    "great",
    "excellent",
    "wonderful",
    "amazing",
    "love",
    "loved",
    "perfect",
    "fantastic",
    "delightful",
    "superb",
    "happy",
    "pleased",
    "reliable",
    "sturdy",
    "friendly",
    "tasty",
    "fresh",
    "recommend",
    "beautiful",
    "brilliant",
    "enjoyed",
    "awesome",
    "comfortable",
    "charming",
    "helpful",
    "impressive",
    "favorite",
    "outstanding",
    "smooth",
    "solid",
    "fun",
    "generous",
    "gorgeous",
    "lovely",
    "terrific",
    "quick",
    "cozy",
    "crisp",
    "elegant",
    "worthy",
];

const NEGATIVE: &[&str] = &[
    "terrible",
    "awful",
    "horrible",
    "poor",
    "hate",
    "hated",
    "broken",
    "disappointing",
    "annoying",
    "frustrating",
    "useless",
    "rude",
    "bland",
    "stale",
    "refund",
    "worst",
    "cheap",
    "flimsy",
    "slow",
    "dirty",
    "overpriced",
    "boring",
    "mediocre",
    "noisy",
    "greasy",
    "unhelpful",
    "faulty",
    "soggy",
    "waste",
    "defective",
    "cold",
    "dull",
    "sloppy",
    "unpleasant",
    "confusing",
    "lousy",
    "pathetic",
    "smelly",
    "cramped",
    "regret",
];

const NEUTRAL: &[&str] = &[
    "i",
    "it",
    "is",
    "was",
    "this",
    "that",
    "we",
    "they",
    "to",
    "of",
    "in",
    "for",
    "on",
    "with",
    "my",
    "our",
    "a",
    "an",
    "at",
    "by",
    "from",
    "as",
    "be",
    "had",
    "have",
    "has",
    "were",
    "been",
    "you",
    "he",
    "she",
    "them",
    "their",
    "there",
    "here",
    "when",
    "then",
    "after",
    "before",
    "about",
    "into",
    "over",
    "under",
    "again",
    "also",
    "just",
    "very",
    "really",
    "quite",
    "product",
    "item",
    "order",
    "box",
    "package",
    "delivery",
    "price",
    "store",
    "shop",
    "staff",
    "service",
    "table",
    "menu",
    "food",
    "meal",
    "dinner",
    "lunch",
    "breakfast",
    "coffee",
    "room",
    "hotel",
    "place",
    "time",
    "day",
    "night",
    "week",
    "month",
    "year",
    "phone",
    "battery",
    "screen",
    "cable",
    "case",
    "book",
    "edition",
    "chapter",
    "author",
    "page",
    "shirt",
    "size",
    "color",
    "shoe",
    "pair",
    "bag",
    "kitchen",
    "pan",
    "knife",
    "plate",
    "chair",
    "desk",
    "lamp",
    "car",
    "tire",
    "seat",
    "door",
    "window",
    "wall",
    "floor",
    "bed",
    "pillow",
    "towel",
    "soap",
    "bottle",
    "water",
    "sauce",
    "bread",
    "cheese",
    "chicken",
    "burger",
    "pizza",
    "salad",
    "soup",
    "waiter",
    "owner",
    "manager",
    "friend",
    "family",
    "wife",
    "husband",
    "kids",
    "dog",
    "cat",
    "bought",
    "ordered",
    "used",
    "tried",
    "came",
    "went",
    "got",
    "made",
    "took",
    "said",
    "told",
    "asked",
    "waited",
    "returned",
    "opened",
    "arrived",
    "looked",
    "seemed",
    "felt",
    "thought",
];

/// Class-conditional vocabulary and length/mixing knobs for the carrier text.
///
/// A sentiment position draws from the example's own class list with
/// probability `polarity`, otherwise from the opposite list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub neutral: Vec<String>,
    pub triggers: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    pub sentiment_rate: f64,
    pub polarity: f64,
    pub trigger_rate: f64,
    /// Trigger occurrences forced into the first `trigger_window` tokens.
    pub min_triggers: usize,
    pub trigger_window: usize,
}

impl Default for VocabSpec {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            positive: own(POSITIVE),
            negative: own(NEGATIVE),
            neutral: own(NEUTRAL),
            triggers: vec!["the".into(), "and".into()],
            min_len: 30,
            max_len: 50,
            sentiment_rate: 0.2,
            polarity: 0.8,
            trigger_rate: 0.12,
            min_triggers: 2,
            trigger_window: 30,
        }
    }
}

impl VocabSpec {
    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() || self.negative.is_empty() || self.neutral.is_empty()
    }

    /// Word list for sentiment class `label` (0 negative, 1 positive).
    pub fn class_words(&self, label: u8) -> &[String] {
        if label == 1 {
            &self.positive
        } else {
            &self.negative
        }
    }
}
