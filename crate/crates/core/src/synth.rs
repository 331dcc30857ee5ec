//! Synthetic strains whose labels are fixed by embedded sequence motifs.
//!
//! A world holds one background template per HA and NA subtype and five
//! short host motifs per channel. Host class `5·a + b` is marked by HA motif
//! `a` and NA motif `b`, so the host can only be read off both channels
//! together. Each strain copies its subtype templates with random point
//! mutations and overwrites one random window per channel with its motif.

use rand::Rng;

use crate::data::{LabelSchema, Source, StrainRecord};
use crate::rng;
use crate::DATASET_FORMAT_VERSION;

const RESIDUES: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub ha_len: usize,
    pub na_len: usize,
    pub motif_len: usize,
    /// Motifs per channel; there are `motifs²` host classes.
    pub motifs: usize,
    pub ha_classes: usize,
    pub na_classes: usize,
    /// Per-residue substitution rate applied to the templates.
    pub background_mutation: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            ha_len: 48,
            na_len: 44,
            motif_len: 9,
            motifs: 5,
            ha_classes: 5,
            na_classes: 4,
            background_mutation: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub spec: SynthSpec,
    ha_templates: Vec<Vec<u8>>,
    na_templates: Vec<Vec<u8>>,
    ha_motifs: Vec<Vec<u8>>,
    na_motifs: Vec<Vec<u8>>,
}

fn random_seq(r: &mut impl Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| RESIDUES[r.gen_range(0..20)]).collect()
}

fn mutate(r: &mut impl Rng, seq: &mut [u8], rate: f64) {
    for x in seq.iter_mut() {
        if rate > 0.0 && r.gen_bool(rate) {
            *x = RESIDUES[r.gen_range(0..20)];
        }
    }
}

impl SyntheticWorld {
    pub fn new(world_seed: u64) -> Self {
        Self::with_spec(world_seed, SynthSpec::default())
    }

    pub fn with_spec(world_seed: u64, spec: SynthSpec) -> Self {
        let mut r = rng::stream(world_seed, "synth/world");
        let ha_templates = (0..spec.ha_classes).map(|_| random_seq(&mut r, spec.ha_len)).collect();
        let na_templates = (0..spec.na_classes).map(|_| random_seq(&mut r, spec.na_len)).collect();
        let ha_motifs = (0..spec.motifs).map(|_| random_seq(&mut r, spec.motif_len)).collect();
        let na_motifs = (0..spec.motifs).map(|_| random_seq(&mut r, spec.motif_len)).collect();
        SyntheticWorld {
            spec,
            ha_templates,
            na_templates,
            ha_motifs,
            na_motifs,
        }
    }

    pub fn host_classes(&self) -> usize {
        self.spec.motifs * self.spec.motifs
    }

    pub fn schema(&self) -> LabelSchema {
        LabelSchema::new(
            (0..self.host_classes()).map(host_name).collect(),
            (1..=self.spec.ha_classes).map(|i| format!("H{i}")).collect(),
            (1..=self.spec.na_classes).map(|i| format!("N{i}")).collect(),
            Default::default(),
            Default::default(),
        )
        .expect("synthetic schema is valid")
    }

    fn channel(&self, r: &mut impl Rng, template: &[u8], motif: &[u8], noise: f64) -> String {
        let mut seq = template.to_vec();
        mutate(r, &mut seq, self.spec.background_mutation);
        let mut m = motif.to_vec();
        mutate(r, &mut m, noise);
        let at = r.gen_range(0..=seq.len() - m.len());
        seq[at..at + m.len()].copy_from_slice(&m);
        String::from_utf8(seq).expect("ascii residues")
    }

    /// One strain with the given labels. `noise` is the per-residue
    /// substitution rate applied to the host motifs.
    pub fn strain(&self, id: String, host: usize, ha: usize, na: usize, noise: f64, r: &mut impl Rng) -> StrainRecord {
        let (a, b) = (host / self.spec.motifs, host % self.spec.motifs);
        let ha_seq = self.channel(r, &self.ha_templates[ha], &self.ha_motifs[a], noise);
        let na_seq = self.channel(r, &self.na_templates[na], &self.na_motifs[b], noise);
        let (h, n) = (format!("H{}", ha + 1), format!("N{}", na + 1));
        StrainRecord {
            format: DATASET_FORMAT_VERSION,
            strain_id: id,
            ha_seq: Some(ha_seq),
            na_seq: Some(na_seq),
            host_raw: host_name(host),
            host_class: host_name(host),
            subtype_raw: format!("{h}{n}"),
            ha_subtype: h,
            na_subtype: n,
            year: Some(2000 + (host as i32 % 20)),
            complete: true,
            source: Source::Other,
        }
    }

    /// `n` strains cycling through all host classes; subtypes are drawn
    /// uniformly. Ids are `{prefix}{index}`.
    pub fn sample(&self, n: usize, seed: u64, noise: f64, prefix: &str) -> Vec<StrainRecord> {
        let mut r = rng::stream(seed, "synth/sample");
        (0..n)
            .map(|i| {
                let host = i % self.host_classes();
                let ha = r.gen_range(0..self.spec.ha_classes);
                let na = r.gen_range(0..self.spec.na_classes);
                self.strain(format!("{prefix}{i:04}"), host, ha, na, noise, &mut r)
            })
            .collect()
    }
}

pub fn host_name(i: usize) -> String {
    format!("host{i:02}")
}
