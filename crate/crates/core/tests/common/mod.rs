#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use mtml::features::Encoded;
use mtml::trainer::TrainExample;
use mtml::{GoldLabels, TaskSchema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row layout of one generated split.
#[derive(Debug, Clone, Copy)]
pub struct SplitShape {
    pub rows: usize,
    pub hof: usize,
    /// HOF rows that carry a task-C label; the rest leave it empty.
    pub hof_with_c: usize,
    pub has_c: bool,
}

pub const EN: [SplitShape; 3] = [
    SplitShape {
        rows: 5852,
        hof: 2261,
        hof_with_c: 2261,
        has_c: true,
    },
    SplitShape {
        rows: 505,
        hof: 302,
        hof_with_c: 299,
        has_c: true,
    },
    SplitShape {
        rows: 1153,
        hof: 288,
        hof_with_c: 288,
        has_c: true,
    },
];
pub const HI: [SplitShape; 3] = [
    SplitShape {
        rows: 4665,
        hof: 2469,
        hof_with_c: 2469,
        has_c: true,
    },
    SplitShape {
        rows: 136,
        hof: 72,
        hof_with_c: 72,
        has_c: true,
    },
    SplitShape {
        rows: 1318,
        hof: 605,
        hof_with_c: 605,
        has_c: true,
    },
];
pub const DE: [SplitShape; 3] = [
    SplitShape {
        rows: 3819,
        hof: 407,
        hof_with_c: 0,
        has_c: false,
    },
    SplitShape {
        rows: 794,
        hof: 134,
        hof_with_c: 0,
        has_c: false,
    },
    SplitShape {
        rows: 850,
        hof: 136,
        hof_with_c: 0,
        has_c: false,
    },
];

const WORDS: &[&str] = &[
    "match", "today", "people", "news", "vote", "game", "city", "love", "idiot", "shame", "team",
    "never", "always", "what", "clean", "dirty", "leader", "great", "bad", "why",
];

/// HASOC-style TSV text with the given shape. NOT rows get `NONE` for B/C.
pub fn hasoc_tsv(shape: SplitShape, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("text_id\ttext\ttask_1\ttask_2");
    if shape.has_c {
        out.push_str("\ttask_3");
    }
    out.push('\n');
    for i in 0..shape.rows {
        let n = rng.random_range(3..10);
        let text: Vec<&str> = (0..n)
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect();
        let hof = i < shape.hof;
        let (a, b, c) = if hof {
            let b = ["HATE", "OFFN", "PRFN"][i % 3];
            let c = if i < shape.hof_with_c {
                ["TIN", "UNT"][i % 2]
            } else {
                ""
            };
            ("HOF", b, c)
        } else {
            ("NOT", "NONE", "NONE")
        };
        let _ = write!(out, "{}\t{}\t{a}\t{b}", i + 1, text.join(" "));
        if shape.has_c {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
    }
    out
}

/// Writes `<lang>_{train,dev,test}.tsv` for all three languages.
pub fn write_hasoc_dir(dir: &Path) {
    for (code, shapes) in [("en", EN), ("hi", HI), ("de", DE)] {
        for (split, shape) in ["train", "dev", "test"].iter().zip(shapes) {
            let seed = code.bytes().map(u64::from).sum::<u64>() + shape.rows as u64;
            std::fs::write(
                dir.join(format!("{code}_{split}.tsv")),
                hasoc_tsv(shape, seed),
            )
            .unwrap();
        }
    }
}

/// Seeded linearly separable data over the full joint schema: each class has
/// a random sign prototype in `[-scale, scale]^d` and examples add bounded
/// noise, so the prototype direction separates the classes.
pub struct Separable {
    pub train: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    pub test_gold: Vec<usize>,
}

pub fn separable(
    train: usize,
    test: usize,
    d: usize,
    scale: f64,
    noise: f64,
    seed: u64,
) -> Separable {
    let schema = TaskSchema::full();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = schema.len();
    let prototypes: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..d)
                .map(|_| if rng.random::<bool>() { scale } else { -scale })
                .collect()
        })
        .collect();
    for (i, p) in prototypes.iter().enumerate() {
        assert!(!prototypes[..i].contains(p), "prototypes must differ");
    }
    let make = |n: usize, tag: &str, rng: &mut ChaCha8Rng| -> (Vec<TrainExample>, Vec<usize>) {
        let mut examples = Vec::with_capacity(n);
        let mut golds = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % k;
            let x: Vec<f64> = prototypes[class]
                .iter()
                .map(|&p| p + rng.random_range(-noise..=noise))
                .collect();
            let parts = schema.joint(class).unwrap().parts();
            examples.push(TrainExample {
                id: format!("{tag}{i}"),
                input: Encoded::Dense(x),
                gold: GoldLabels::new(parts[0], parts[1], parts[2]),
            });
            golds.push(class);
        }
        (examples, golds)
    };
    let (train, _) = make(train, "tr", &mut rng);
    let (test, test_gold) = make(test, "te", &mut rng);
    Separable {
        train,
        test,
        test_gold,
    }
}
