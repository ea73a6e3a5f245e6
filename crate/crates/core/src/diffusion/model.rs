use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneArch};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::layout::{Layout, M_MAX};
use crate::nn::{Graph, Linear, ParamStore, Segments, Var};

/// Everything besides the weights needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub arch: BackboneArch,
    pub schedule: ScheduleConfig,
    /// Prompt ids in table order.
    pub prompts: Vec<String>,
    /// `count_prior[p][m]`: how many training layouts of prompt `p` had `m`
    /// elements; the last row pools all prompts for the null condition.
    pub count_prior: Vec<Vec<u32>>,
}

impl DiffusionSpec {
    pub fn new(arch: BackboneArch, schedule: ScheduleConfig, prompts: Vec<String>) -> Self {
        let arch = BackboneArch { n_prompts: prompts.len(), time_embedding: true, ..arch };
        let count_prior = vec![vec![0; M_MAX + 1]; prompts.len() + 1];
        Self { arch, schedule, prompts, count_prior }
    }

    pub fn prompt_index(&self, id: Option<&str>) -> Option<usize> {
        match id {
            None => Some(self.arch.null_prompt()),
            Some(id) => self.prompts.iter().position(|p| p == id),
        }
    }

    /// Records element counts of `layouts` in the count prior.
    pub fn observe_counts(&mut self, layouts: &[Layout]) {
        let null = self.arch.null_prompt();
        for l in layouts {
            let m = l.len().min(M_MAX);
            if let Some(p) = self.prompt_index(l.prompt_id.as_deref()) {
                if p != null {
                    self.count_prior[p][m] += 1;
                }
            }
            self.count_prior[null][m] += 1;
        }
    }

    /// Draws an element count for prompt `cond`, falling back to the pooled
    /// histogram and finally to a fixed default.
    pub fn sample_count<R: Rng + ?Sized>(&self, cond: usize, rng: &mut R) -> usize {
        let null = self.arch.null_prompt();
        let hist = if self.count_prior[cond].iter().any(|&c| c > 0) { &self.count_prior[cond] } else { &self.count_prior[null] };
        let total: u64 = hist.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return 11.min(self.arch.max_len);
        }
        let mut r = rng.random_range(0..total);
        for (m, &c) in hist.iter().enumerate() {
            if r < c as u64 {
                return m.clamp(1, self.arch.max_len);
            }
            r -= c as u64;
        }
        unreachable!("histogram walk always terminates")
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionModel {
    spec: DiffusionSpec,
    schedule: NoiseSchedule,
    store: ParamStore,
    backbone: Backbone,
    out: Linear,
}

impl DiffusionModel {
    pub fn new<R: Rng + ?Sized>(spec: DiffusionSpec, rng: &mut R) -> Result<Self> {
        if spec.count_prior.len() != spec.prompts.len() + 1 || spec.arch.n_prompts != spec.prompts.len() {
            return Err(Error::Config("count prior / prompt table size mismatch".into()));
        }
        let schedule = NoiseSchedule::from_config(&spec.schedule)?;
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, "den", &spec.arch, rng);
        let out = Linear::new(&mut store, "den.out", spec.arch.width, spec.arch.latent_dim, 0.1, rng);
        Ok(Self { spec, schedule, store, backbone, out })
    }

    pub fn from_store(spec: DiffusionSpec, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.arch.latent_dim
    }

    pub fn null_prompt(&self) -> usize {
        self.spec.arch.null_prompt()
    }

    pub fn content_hash(&self) -> String {
        self.store.content_hash()
    }

    /// Noise prediction `ε_φ(z_t, t, c)` for stacked sequences.
    pub fn eps_graph(&self, g: &mut Graph, z: Var, seg: &Rc<Segments>, t: &[usize], cond: &[usize]) -> Var {
        let h = self.backbone.forward(g, z, seg, t, cond);
        self.out.forward(g, h)
    }

    /// Classifier-free guided prediction `ε_u + g·(ε_c − ε_u)`; a single
    /// pass when `guidance` is exactly 0 or 1.
    pub fn guided_eps_graph(&self, g: &mut Graph, z: Var, seg: &Rc<Segments>, t: &[usize], cond: &[usize], guidance: f64) -> Var {
        let null = vec![self.null_prompt(); cond.len()];
        if guidance == 1.0 {
            return self.eps_graph(g, z, seg, t, cond);
        }
        if guidance == 0.0 {
            return self.eps_graph(g, z, seg, t, &null);
        }
        let ec = self.eps_graph(g, z, seg, t, cond);
        let eu = self.eps_graph(g, z, seg, t, &null);
        let d = g.sub(ec, eu);
        let d = g.scale(d, guidance);
        g.add(eu, d)
    }
}
