//! Generated separable corpus: vulnerable samples carry a concatenated sink
//! call, safe samples carry none. Both share the same filler statements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::{Dataset, LabeledSample};
use crate::uast::Language;

const NAMES: &[&str] = &[
    "user", "item", "path", "token", "host", "query", "name", "value", "key", "entry",
];
const TABLES: &[&str] = &["users", "orders", "logs", "items", "sessions"];
const COMMANDS: &[&str] = &["ping -c 1", "ls -l", "cat", "grep -c", "nslookup"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn python<R: Rng>(rng: &mut R, vulnerable: bool) -> String {
    let a = pick(rng, NAMES);
    let mut body = Vec::new();
    for j in 0..rng.random_range(1..5) {
        body.push(match rng.random_range(0..3) {
            0 => format!("n{j} = len({a}) + {}", rng.random_range(1..100)),
            1 => format!("s{j} = {a}.strip().lower()"),
            _ => format!(
                "if len({a}) > {}:\n        {a} = {a}[:{}]",
                rng.random_range(8..64),
                rng.random_range(4..8)
            ),
        });
    }
    if vulnerable {
        body.push(match rng.random_range(0..4) {
            0 => format!(
                "cur.execute(\"SELECT * FROM {} WHERE id = '\" + {a} + \"'\")",
                pick(rng, TABLES)
            ),
            1 => format!("os.system(\"{} \" + {a})", pick(rng, COMMANDS)),
            2 => format!("return pickle.loads({a})"),
            _ => format!("out = os.popen(\"{} \" + {a}).read()", pick(rng, COMMANDS)),
        });
    } else {
        body.push(match rng.random_range(0..3) {
            0 => format!("return {a}.upper()"),
            1 => format!("total = sum(ord(c) for c in {a})\n    return total"),
            _ => format!("parts = {a}.split(\",\")\n    return len(parts)"),
        });
    }
    format!(
        "import os\nimport pickle\n\n\ndef handle({a}):\n    {}\n",
        body.join("\n    ")
    )
}

fn java<R: Rng>(rng: &mut R, vulnerable: bool, i: usize) -> String {
    let a = pick(rng, NAMES);
    let mut body = Vec::new();
    for j in 0..rng.random_range(1..5) {
        body.push(match rng.random_range(0..3) {
            0 => format!("int n{j} = {a}.length() + {};", rng.random_range(1..100)),
            1 => format!("String s{j} = {a}.trim().toLowerCase();"),
            _ => format!("if ({a}.isEmpty()) {{ return; }}"),
        });
    }
    if vulnerable {
        body.push(match rng.random_range(0..3) {
            0 => format!(
                "stmt.executeQuery(\"SELECT * FROM {} WHERE id = '\" + {a} + \"'\");",
                pick(rng, TABLES)
            ),
            1 => format!(
                "Runtime.getRuntime().exec(\"{} \" + {a});",
                pick(rng, COMMANDS)
            ),
            _ => "Object o = in.readObject();".to_string(),
        });
    } else {
        body.push(match rng.random_range(0..2) {
            0 => format!("System.out.println({a}.toUpperCase());"),
            _ => format!(
                "String[] parts = {a}.split(\",\");\n        System.out.println(parts.length);"
            ),
        });
    }
    format!(
        "public class C{i} {{\n    public static void handle(String {a}) throws Exception {{\n        {}\n    }}\n}}\n",
        body.join("\n        ")
    )
}

fn cpp<R: Rng>(rng: &mut R, vulnerable: bool) -> String {
    let a = pick(rng, NAMES);
    let mut body = Vec::new();
    for j in 0..rng.random_range(1..5) {
        body.push(match rng.random_range(0..3) {
            0 => format!(
                "int n{j} = static_cast<int>(std::strlen({a})) + {};",
                rng.random_range(1..100)
            ),
            1 => format!("if ({a} == nullptr) {{ return; }}"),
            _ => format!("char c{j} = {a}[0];"),
        });
    }
    if vulnerable {
        body.push(match rng.random_range(0..3) {
            0 => format!(
                "char buf[{}];\n    strcpy(buf, {a});",
                rng.random_range(8..64)
            ),
            1 => format!(
                "system((std::string(\"{} \") + {a}).c_str());",
                pick(rng, COMMANDS)
            ),
            _ => format!(
                "char line[{}];\n    sprintf(line, \"v=%s\", {a});",
                rng.random_range(8..64)
            ),
        });
    } else {
        body.push(match rng.random_range(0..2) {
            0 => format!("std::string s({a});\n    std::printf(\"%zu\\n\", s.size());"),
            _ => format!("std::size_t n = std::strlen({a});\n    std::printf(\"%zu\\n\", n);"),
        });
    }
    format!(
        "#include <cstdio>\n#include <cstdlib>\n#include <cstring>\n#include <string>\n\nvoid handle(const char* {a}) {{\n    {}\n}}\n",
        body.join("\n    ")
    )
}

/// `n` samples alternating languages, half vulnerable, deterministic per seed.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let vulnerable = (i / 3) % 2 == 0;
            let (language, source) = match i % 3 {
                0 => (Language::Python, python(&mut rng, vulnerable)),
                1 => (Language::Java, java(&mut rng, vulnerable, i)),
                _ => (Language::Cpp, cpp(&mut rng, vulnerable)),
            };
            LabeledSample {
                id: format!("syn{i:04}.{}", language.extension()),
                language,
                source,
                label: vulnerable as u8,
            }
        })
        .collect()
}

/// Seeded 80/20 train/validation split of [`synthetic_corpus`].
pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let samples = synthetic_corpus(n, seed);
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let lists = super::corpus::split(&ids, seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in samples {
        if lists.train.contains(&s.id) {
            train.push(s);
        } else {
            val.push(s);
        }
    }
    Dataset { train, val }
}
