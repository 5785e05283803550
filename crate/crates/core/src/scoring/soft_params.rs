use std::collections::BTreeMap;

use candle_core::{Tensor, Var};

use super::backend::ParamStore;
use super::MaskedLm;
use crate::error::{Error, Result};
use crate::prompting::{
    slot_marker, HypToken, SlotFamily, SoftPromptSpec, TemplateKind, TemplateSet,
};

const TABLE: &str = "soft.table";

/// One embedding row per slot marker, stored as a single trainable table.
#[derive(Clone)]
pub struct SoftPromptParameters {
    pub spec: SoftPromptSpec,
    store: ParamStore,
    rows: BTreeMap<String, u32>,
}

impl SoftPromptParameters {
    /// Each slot starts as a copy of the template word it replaces. With an
    /// explicit slot count the template words are cycled.
    pub fn init(
        spec: &SoftPromptSpec,
        templates: &TemplateSet,
        types: &[String],
        backend: &dyn MaskedLm,
    ) -> Result<Self> {
        spec.validate()?;
        let vocab = backend.vocab();
        spec.check_collisions(templates, types, |m| vocab.contains(m))?;
        let mut rows = BTreeMap::new();
        let mut init_ids = Vec::new();
        for (family, n) in spec.families(templates, types) {
            let kind = match family {
                SlotFamily::Null => TemplateKind::NullOther,
                _ => TemplateKind::Positive,
            };
            let words: Vec<String> = templates
                .get(kind)
                .tokens(&["x".to_string()], Some("x"))
                .into_iter()
                .filter_map(|t| match t {
                    HypToken::Template(w) => Some(w),
                    _ => None,
                })
                .collect();
            for i in 0..n {
                let id = match words.is_empty() {
                    true => vocab.id(super::vocab::UNK),
                    false => vocab.id(&words[i % words.len()]),
                };
                rows.insert(slot_marker(&family, i), init_ids.len() as u32);
                init_ids.push(id);
            }
        }
        let ids = Tensor::new(init_ids.as_slice(), &super::backend::cpu())?;
        let table = backend.embed_ids(&ids)?.detach().copy()?;
        let mut store = ParamStore::new();
        store.insert(TABLE, table)?;
        Ok(SoftPromptParameters {
            spec: spec.clone(),
            store,
            rows,
        })
    }

    pub fn row(&self, marker: &str) -> Option<u32> {
        self.rows.get(marker).copied()
    }

    pub fn slot_count(&self) -> usize {
        self.rows.len()
    }

    pub fn table(&self) -> Result<&Tensor> {
        self.store.get(TABLE)
    }

    pub fn var(&self) -> &Var {
        self.store.var(TABLE).expect("table is always present")
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Copies every row whose marker also exists in `other`.
    pub fn copy_rows_from(&self, other: &SoftPromptParameters) -> Result<()> {
        let mut table = self.table()?.to_vec2::<f32>()?;
        let theirs = other.table()?.to_vec2::<f32>()?;
        for (marker, &row) in &self.rows {
            if let Some(r) = other.row(marker) {
                table[row as usize] = theirs[r as usize].clone();
            }
        }
        let (n, d) = (table.len(), table.first().map_or(0, Vec::len));
        let t = Tensor::from_vec(
            table.into_iter().flatten().collect::<Vec<_>>(),
            (n, d),
            &super::backend::cpu(),
        )?;
        self.var().set(&t)?;
        Ok(())
    }

    /// Row lookup for every token of a rendered input; errors on an
    /// unknown marker.
    pub(crate) fn rows_for(
        &self,
        tokens: &[String],
        is_slot: impl Fn(usize) -> bool,
    ) -> Result<Vec<Option<u32>>> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| match is_slot(i) {
                false => Ok(None),
                true => self
                    .row(t)
                    .map(Some)
                    .ok_or_else(|| Error::Argument(format!("no soft-prompt row for {t}"))),
            })
            .collect()
    }
}
