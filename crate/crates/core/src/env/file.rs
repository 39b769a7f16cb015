//! Preprocessed feature files.
//!
//! ```text
//! #duelcluster-env v1 d=2
//! item  a   0.6 0.8
//! item  b   1.0 0.0
//! user  u1  0.0 1.0      # linear parameter rows ...
//! reward u1 a 0.25       # ... or table rows, never both
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::{min_pairwise_distance, ArmLaw, GroundTruth, RewardModel};
use crate::error::{Error, Result};

const HEADER: &str = "#duelcluster-env v1";

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_feature_file(&text, path)
}

struct Parser<'a> {
    path: &'a Path,
}

impl Parser<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    fn floats(&self, line: usize, toks: &[&str], d: usize) -> Result<Vec<f64>> {
        if toks.len() != d {
            return Err(self.err(line, format!("expected {d} values, found {}", toks.len())));
        }
        toks.iter()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(self.err(line, format!("invalid number '{t}'"))),
            })
            .collect()
    }
}

#[derive(PartialEq, Clone, Copy)]
enum UserKind {
    Vectors,
    Table,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn intern_id<'a>(
    map: &mut HashMap<&'a str, usize>,
    order: &mut Vec<&'a str>,
    id: &'a str,
) -> usize {
    *map.entry(id).or_insert_with(|| {
        order.push(id);
        order.len() - 1
    })
}

/// Parses the text of a feature file; `path` is only used in error messages.
pub fn parse_feature_file(text: &str, path: &Path) -> Result<GroundTruth> {
    let p = Parser { path };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (hline, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| p.err(1, "empty file"))?;
    let header = header.trim();
    let rest = header
        .strip_prefix(HEADER)
        .ok_or_else(|| p.err(hline, format!("expected header '{HEADER} d=<int>'")))?;
    let d: usize = rest
        .trim()
        .strip_prefix("d=")
        .and_then(|v| v.parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| p.err(hline, "header must declare d=<positive int>"))?;

    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut items: Vec<Vec<f64>> = Vec::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut user_order: Vec<&str> = Vec::new();
    let mut user_vectors: Vec<Vec<f64>> = Vec::new();
    let mut rewards: Vec<(usize, &str, f64, usize)> = Vec::new();
    let mut kind: Option<UserKind> = None;

    for (lineno, raw) in lines {
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let mut set_kind = |k: UserKind| -> Result<()> {
            match kind {
                Some(prev) if prev != k => Err(p.err(
                    lineno,
                    "user rows and reward rows cannot be mixed in one file",
                )),
                _ => {
                    kind = Some(k);
                    Ok(())
                }
            }
        };
        match toks[0] {
            "item" => {
                if toks.len() < 2 {
                    return Err(p.err(lineno, "item row is missing its id"));
                }
                let v = p.floats(lineno, &toks[2..], d)?;
                if norm(&v) > 1.0 + 1e-9 {
                    return Err(p.err(lineno, "item features must have norm <= 1"));
                }
                if item_index.insert(toks[1], items.len()).is_some() {
                    return Err(p.err(lineno, format!("duplicate item id '{}'", toks[1])));
                }
                items.push(v);
            }
            "user" => {
                set_kind(UserKind::Vectors)?;
                if toks.len() < 2 {
                    return Err(p.err(lineno, "user row is missing its id"));
                }
                let v = p.floats(lineno, &toks[2..], d)?;
                if norm(&v) > 1.0 + 1e-9 {
                    return Err(p.err(lineno, "user parameters must have norm <= 1"));
                }
                if user_index.contains_key(toks[1]) {
                    return Err(p.err(lineno, format!("duplicate user id '{}'", toks[1])));
                }
                intern_id(&mut user_index, &mut user_order, toks[1]);
                user_vectors.push(v);
            }
            "reward" => {
                set_kind(UserKind::Table)?;
                if toks.len() != 4 {
                    return Err(p.err(lineno, "reward rows are 'reward <user> <item> <value>'"));
                }
                let v = p.floats(lineno, &toks[3..], 1)?[0];
                if v.abs() > 1.0 {
                    return Err(p.err(lineno, "rewards must lie in [-1, 1]"));
                }
                let u = intern_id(&mut user_index, &mut user_order, toks[1]);
                rewards.push((u, toks[2], v, lineno));
            }
            other => return Err(p.err(lineno, format!("unknown row kind '{other}'"))),
        }
    }

    if items.is_empty() {
        return Err(p.err(hline, "no item rows"));
    }
    let users = user_order.len();
    if users == 0 {
        return Err(p.err(hline, "no user or reward rows"));
    }

    // Group users with identical reward functions into clusters.
    let rows: Vec<Vec<f64>> = match kind {
        Some(UserKind::Vectors) => user_vectors,
        Some(UserKind::Table) => {
            let mut table = vec![vec![f64::NAN; items.len()]; users];
            for (u, item, v, lineno) in rewards {
                let i = *item_index
                    .get(item)
                    .ok_or_else(|| p.err(lineno, format!("unknown item id '{item}'")))?;
                if !table[u][i].is_nan() {
                    return Err(p.err(lineno, format!("duplicate reward for ({}, {item})", user_order[u])));
                }
                table[u][i] = v;
            }
            for (u, row) in table.iter().enumerate() {
                if let Some(i) = row.iter().position(|v| v.is_nan()) {
                    return Err(Error::Feature(format!(
                        "{}: missing reward for user '{}' item #{i}",
                        path.display(),
                        user_order[u]
                    )));
                }
            }
            table
        }
        None => unreachable!(),
    };

    let mut centres: Vec<Vec<f64>> = Vec::new();
    let mut assignment = Vec::with_capacity(users);
    for row in &rows {
        let j = match centres.iter().position(|c| c == row) {
            Some(j) => j,
            None => {
                centres.push(row.clone());
                centres.len() - 1
            }
        };
        assignment.push(j);
    }
    let gamma = {
        let refs: Vec<&[f64]> = centres.iter().map(Vec::as_slice).collect();
        min_pairwise_distance(&refs)
    };
    let models = centres
        .into_iter()
        .map(|c| match kind {
            Some(UserKind::Vectors) => RewardModel::Linear(c),
            _ => RewardModel::Table(c),
        })
        .collect::<Vec<_>>();

    Ok(GroundTruth {
        users,
        clusters: models.len(),
        assignment,
        models,
        gamma,
        arm_law: ArmLaw::Catalog { items },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ArmSet;

    fn parse(text: &str) -> Result<GroundTruth> {
        parse_feature_file(text, Path::new("test.env"))
    }

    #[test]
    fn table_file_round_trips_values() {
        let text = "#duelcluster-env v1 d=2\n\
                    # two users, three items\n\
                    item a 1 0\nitem b 0 1\nitem c 0.6 0.8\n\
                    reward u a 0.1\nreward u b 0.2\nreward u c 0.3\n\
                    reward v a -0.5\nreward v b 0.0\nreward v c 0.9   # trailing comment\n";
        let gt = parse(text).unwrap();
        assert_eq!(gt.users, 2);
        assert_eq!(gt.clusters, 2);
        let arms = ArmSet {
            arms: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]],
            items: Some(vec![0, 1, 2]),
        };
        assert_eq!(gt.arm_rewards(0, &arms).unwrap(), vec![0.1, 0.2, 0.3]);
        assert_eq!(gt.arm_rewards(1, &arms).unwrap(), vec![-0.5, 0.0, 0.9]);
    }

    #[test]
    fn linear_file_groups_identical_users() {
        let text = "#duelcluster-env v1 d=2\nitem a 1 0\nitem b 0 1\n\
                    user x 0.6 0.8\nuser y 1 0\nuser z 0.6 0.8\n";
        let gt = parse(text).unwrap();
        assert_eq!(gt.assignment, vec![0, 1, 0]);
        assert!(matches!(gt.models[0], RewardModel::Linear(_)));
        assert!((gt.gamma - (0.16f64 + 0.64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn large_population_file() {
        let mut text = String::from("#duelcluster-env v1 d=20\n");
        for i in 0..50 {
            let mut v = vec![0.0; 20];
            v[i % 20] = 1.0;
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            text.push_str(&format!("item i{i} {}\n", row.join(" ")));
        }
        for u in 0..200 {
            let mut v = vec![0.0; 20];
            v[u % 5] = 1.0;
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            text.push_str(&format!("user u{u} {}\n", row.join(" ")));
        }
        let gt = parse(&text).unwrap();
        assert_eq!((gt.users, gt.clusters, gt.dim()), (200, 5, 20));
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        let missing = "#duelcluster-env v1 d=2\nitem a 1 0\nuser u 0.5\n";
        assert_eq!(line_of(parse(missing).unwrap_err()), 3);
        let dup = "#duelcluster-env v1 d=1\nitem a 1\nitem a 0.5\nuser u 1\n";
        assert_eq!(line_of(parse(dup).unwrap_err()), 3);
        let mixed = "#duelcluster-env v1 d=1\nitem a 1\nuser u 1\nreward u a 0.2\n";
        assert_eq!(line_of(parse(mixed).unwrap_err()), 4);
        let bad_header = "duelcluster v1 d=1\n";
        assert_eq!(line_of(parse(bad_header).unwrap_err()), 1);
        let bad_num = "#duelcluster-env v1 d=1\n\nitem a x\n";
        assert_eq!(line_of(parse(bad_num).unwrap_err()), 3);
        let unknown_item = "#duelcluster-env v1 d=1\nitem a 1\nreward u b 0.2\n";
        assert_eq!(line_of(parse(unknown_item).unwrap_err()), 3);
    }

    #[test]
    fn incomplete_table_is_rejected() {
        let text = "#duelcluster-env v1 d=1\nitem a 1\nitem b -1\nreward u a 0.2\n";
        assert!(matches!(parse(text), Err(Error::Feature(_))));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_feature_file("/nonexistent/x.env").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.env"));
    }
}
