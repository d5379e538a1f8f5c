use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::Deserialize;

use super::{hamming, DesignCatalog, DesignRecord, IngestError, StyleCollection};

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    title: String,
    style_tags: Vec<String>,
    image_path: String,
    embedding_path: String,
    width_px: u32,
    height_px: u32,
    #[serde(default)]
    phash: Option<u64>,
}

/// Loads a JSON-lines design manifest. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<DesignCatalog, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut catalog = parse_manifest(&text)?;
    catalog.source = path.display().to_string();
    Ok(catalog)
}

pub(crate) fn parse_manifest(text: &str) -> Result<DesignCatalog, IngestError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine =
            serde_json::from_str(line).map_err(|e| IngestError::MalformedManifest {
                line: line_no,
                message: e.to_string(),
            })?;
        if raw.width_px == 0 || raw.height_px == 0 {
            return Err(IngestError::MalformedManifest {
                line: line_no,
                message: format!("design {:?} has a zero dimension", raw.id),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(IngestError::DuplicateId(raw.id));
        }
        records.push(DesignRecord {
            id: raw.id,
            title: raw.title,
            style_tags: raw
                .style_tags
                .iter()
                .map(|t| t.trim().to_lowercase())
                .collect(),
            image_path: raw.image_path,
            embedding_path: raw.embedding_path,
            width_px: raw.width_px,
            height_px: raw.height_px,
            phash: raw.phash,
        });
    }
    Ok(DesignCatalog {
        records,
        source: String::new(),
    })
}

/// Picks the largest record, breaking ties by the smallest id.
fn keep_largest<'a>(group: impl IntoIterator<Item = &'a DesignRecord>) -> Option<&'a DesignRecord> {
    group
        .into_iter()
        .min_by(|a, b| b.area().cmp(&a.area()).then_with(|| a.id.cmp(&b.id)))
}

/// Removes duplicate designs.
///
/// First, among records sharing an exact title only the largest survives.
/// Then records are grouped by the transitive closure of "phash Hamming
/// distance < `phash_threshold`" and again only the largest of each group
/// survives. Ties go to the lexicographically smallest id. Survivors keep
/// their input order.
pub fn dedup_catalog(
    catalog: &DesignCatalog,
    phash_threshold: u32,
) -> Result<DesignCatalog, IngestError> {
    let mut hashes = Vec::with_capacity(catalog.records.len());
    for r in &catalog.records {
        hashes.push(
            r.phash
                .ok_or_else(|| IngestError::MissingPhash(r.id.clone()))?,
        );
    }

    let mut by_title: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in catalog.records.iter().enumerate() {
        by_title.entry(r.title.as_str()).or_default().push(i);
    }
    let mut after_title: Vec<usize> = by_title
        .values()
        .filter_map(|group| {
            let best = keep_largest(group.iter().map(|&i| &catalog.records[i]))?;
            group
                .iter()
                .copied()
                .find(|&i| catalog.records[i].id == best.id)
        })
        .collect();
    after_title.sort_unstable();

    let n = after_title.len();
    let mut uf = UnionFind::new(n);
    for a in 0..n {
        for b in (a + 1)..n {
            if hamming(hashes[after_title[a]], hashes[after_title[b]]) < phash_threshold {
                uf.union(a, b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..n {
        groups.entry(uf.find(a)).or_default().push(after_title[a]);
    }
    let survivors: BTreeSet<usize> = groups
        .values()
        .filter_map(|group| {
            let best = keep_largest(group.iter().map(|&i| &catalog.records[i]))?;
            group
                .iter()
                .copied()
                .find(|&i| catalog.records[i].id == best.id)
        })
        .collect();

    Ok(DesignCatalog {
        records: survivors
            .into_iter()
            .map(|i| catalog.records[i].clone())
            .collect(),
        source: catalog.source.clone(),
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so group keys stay stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// The set of style tags the pipeline knows about, one per line on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StyleAllowlist {
    styles: BTreeSet<String>,
}

impl StyleAllowlist {
    pub fn new<I, S>(styles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            styles: styles
                .into_iter()
                .map(|s| s.as_ref().trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::new(text.lines()))
    }

    pub fn contains(&self, style: &str) -> bool {
        self.styles.contains(style)
    }

    /// Styles in lexicographic order.
    pub fn styles(&self) -> impl Iterator<Item = &str> {
        self.styles.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }
}

/// Drops tags outside the allowlist, then drops records left without tags.
pub fn filter_to_allowlist(catalog: &DesignCatalog, allowlist: &StyleAllowlist) -> DesignCatalog {
    let records = catalog
        .records
        .iter()
        .filter_map(|r| {
            let tags: Vec<String> = r
                .style_tags
                .iter()
                .filter(|t| allowlist.contains(t))
                .cloned()
                .collect();
            (!tags.is_empty()).then(|| DesignRecord {
                style_tags: tags,
                ..r.clone()
            })
        })
        .collect();
    DesignCatalog {
        records,
        source: catalog.source.clone(),
    }
}

pub fn collect_style(
    catalog: &DesignCatalog,
    allowlist: &StyleAllowlist,
    style: &str,
    min_count: usize,
) -> Result<StyleCollection, IngestError> {
    if !allowlist.contains(style) {
        return Err(IngestError::UnknownStyle(style.to_string()));
    }
    let members: Vec<DesignRecord> = catalog
        .records
        .iter()
        .filter(|r| r.has_style(style))
        .cloned()
        .collect();
    if members.len() < min_count {
        return Err(IngestError::InsufficientData {
            style: style.to_string(),
            found: members.len(),
            required: min_count,
        });
    }
    Ok(StyleCollection {
        style: style.to_string(),
        members,
        min_count,
    })
}
