//! Procedural corpus of mobile-screen layouts built from structural motifs
//! (toolbars, list stacks, grids, chat bubbles), one motif family per prompt.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Imported,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub layouts: Vec<Layout>,
    pub prompts: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Every prompt id used by a layout must resolve in the prompt table.
    pub fn check_prompts(&self) -> Result<()> {
        for (i, l) in self.layouts.iter().enumerate() {
            if let Some(p) = &l.prompt_id {
                if !self.prompts.contains_key(p) {
                    return Err(Error::parse(format!("layouts[{i}].prompt_id"), format!("unknown prompt `{p}`")));
                }
            }
        }
        Ok(())
    }

    pub fn prompt_ids(&self) -> Vec<String> {
        self.prompts.keys().cloned().collect()
    }
}

/// Screen families; each maps to one prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Screen {
    Login,
    Settings,
    Gallery,
    Chat,
    Product,
    Shopping,
    Profile,
    Music,
}

impl Screen {
    pub const ALL: [Screen; 8] =
        [Screen::Login, Screen::Settings, Screen::Gallery, Screen::Chat, Screen::Product, Screen::Shopping, Screen::Profile, Screen::Music];

    pub fn id(self) -> &'static str {
        match self {
            Screen::Login => "login",
            Screen::Settings => "settings",
            Screen::Gallery => "gallery",
            Screen::Chat => "chat",
            Screen::Product => "product",
            Screen::Shopping => "shopping",
            Screen::Profile => "profile",
            Screen::Music => "music",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Screen::Login => "a login screen",
            Screen::Settings => "a settings page with toggles",
            Screen::Gallery => "a photo gallery",
            Screen::Chat => "a chat conversation",
            Screen::Product => "a product detail page",
            Screen::Shopping => "a shopping checklist",
            Screen::Profile => "a user profile page",
            Screen::Music => "a music player",
        }
    }

    /// Number of elements in the fixed (non-repeating) part.
    fn fixed_len(self) -> usize {
        match self {
            Screen::Login => 6,
            Screen::Settings | Screen::Gallery | Screen::Shopping => 2,
            Screen::Chat => 3,
            Screen::Product => 5,
            Screen::Profile => 4,
            Screen::Music => 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_layouts: usize,
    pub mean_elements: f64,
    pub sd_elements: f64,
    /// Uniform per-coordinate jitter applied to every generated box.
    pub jitter: f64,
    pub screens: Vec<Screen>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_layouts: 5000, mean_elements: 11.4, sd_elements: 4.0, jitter: 0.006, screens: Screen::ALL.to_vec() }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layouts == 0 {
            return Err(Error::Config("n_layouts must be at least 1".into()));
        }
        if !(1.0..=M_MAX as f64).contains(&self.mean_elements) {
            return Err(Error::Config(format!("mean_elements {} outside [1, {M_MAX}]", self.mean_elements)));
        }
        if !(self.sd_elements >= 0.0 && self.sd_elements.is_finite()) {
            return Err(Error::Config("sd_elements must be finite and non-negative".into()));
        }
        if !(0.0..=0.05).contains(&self.jitter) {
            return Err(Error::Config("jitter must lie in [0, 0.05]".into()));
        }
        if self.screens.is_empty() {
            return Err(Error::Config("at least one screen template is required".into()));
        }
        Ok(())
    }
}

/// Generates a corpus; identical `(config, seed)` give identical corpora.
pub fn gen_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count_dist = Normal::new(config.mean_elements, config.sd_elements.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;
    let mut layouts = Vec::with_capacity(config.n_layouts);
    for _ in 0..config.n_layouts {
        let screen = config.screens[rng.random_range(0..config.screens.len())];
        let raw = count_dist.sample(&mut rng).round();
        let m = (raw.max(1.0) as usize).clamp(screen.fixed_len() + 1, M_MAX);
        let elements = build_screen(screen, m, config.jitter, &mut rng);
        layouts.push(Layout { elements, prompt_id: Some(screen.id().to_string()) });
    }
    let prompts = config.screens.iter().map(|s| (s.id().to_string(), s.text().to_string())).collect();
    Ok(Corpus { layouts, prompts, provenance: Provenance::Synthetic })
}

struct Builder<'a, R: Rng> {
    els: Vec<Element>,
    rng: &'a mut R,
    jitter: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn push(&mut self, cls: ElementClass, x0: f64, y0: f64, x1: f64, y1: f64) {
        let j = self.jitter;
        let mut c = [x0, y0, x1, y1];
        if j > 0.0 {
            for v in &mut c {
                *v += self.rng.random_range(-j..=j);
            }
        }
        let b = BBox::new(c[0], c[1], c[2], c[3]).sanitized();
        self.els.push(Element::new(cls, b));
    }

    fn toolbar(&mut self, with_title: bool) -> f64 {
        let h = self.rng.random_range(0.07..0.09);
        self.push(TOOLBAR, 0.0, 0.0, 1.0, h);
        if with_title {
            self.push(LABEL, 0.05, h * 0.25, 0.55, h * 0.75);
        }
        h
    }
}

/// Vertical slots for `n` rows inside `[top, bottom]`.
fn rows(top: f64, bottom: f64, n: usize, pref: f64, gap: f64) -> Vec<(f64, f64)> {
    let pitch = ((bottom - top) / n.max(1) as f64).min(pref + gap);
    let h = (pitch - gap).max(pitch * 0.5);
    (0..n).map(|i| (top + i as f64 * pitch, top + i as f64 * pitch + h)).collect()
}

fn build_screen<R: Rng>(screen: Screen, m: usize, jitter: f64, rng: &mut R) -> Vec<Element> {
    let fixed = screen.fixed_len();
    let extra = m.saturating_sub(fixed);
    let mut b = Builder { els: Vec::with_capacity(m + 3), rng, jitter };
    match screen {
        Screen::Login => {
            let th = b.toolbar(false);
            let logo = b.rng.random_range(0.12..0.2);
            b.push(IMAGE, 0.5 - logo, th + 0.04, 0.5 + logo, th + 0.04 + logo * 1.1);
            let y = th + 0.1 + logo * 1.1;
            b.push(TEXT_FIELD, 0.1, y, 0.9, y + 0.06);
            b.push(TEXT_FIELD, 0.1, y + 0.09, 0.9, y + 0.15);
            b.push(BUTTON, 0.25, y + 0.2, 0.75, y + 0.26);
            b.push(LABEL, 0.3, y + 0.29, 0.7, y + 0.32);
            let cols = 4;
            let slots = rows(y + 0.36, 0.98, extra.div_ceil(cols), 0.07, 0.02);
            for i in 0..extra {
                let (y0, y1) = slots[i / cols];
                let x0 = 0.12 + (i % cols) as f64 * 0.2;
                b.push(ICON, x0, y0, x0 + 0.14, y1);
            }
        }
        Screen::Settings => {
            b.toolbar(true);
            let units = extra.div_ceil(3);
            let pref = b.rng.random_range(0.06..0.09);
            for (y0, y1) in rows(0.11, 0.98, units, pref, 0.01) {
                b.push(LIST_ITEM, 0.0, y0, 1.0, y1);
                b.push(LABEL, 0.05, y0 + (y1 - y0) * 0.25, 0.6, y1 - (y1 - y0) * 0.25);
                b.push(SWITCH, 0.8, y0 + (y1 - y0) * 0.2, 0.95, y1 - (y1 - y0) * 0.2);
            }
        }
        Screen::Gallery => {
            b.toolbar(true);
            let cols = b.rng.random_range(2..=3usize);
            let w = 0.92 / cols as f64;
            let slots = rows(0.11, 0.98, extra.div_ceil(cols), w * 0.9, 0.015);
            for i in 0..extra {
                let (y0, y1) = slots[i / cols];
                let x0 = 0.04 + (i % cols) as f64 * w;
                b.push(IMAGE, x0, y0, x0 + w - 0.02, y1);
            }
        }
        Screen::Chat => {
            b.toolbar(true);
            b.push(TEXT_FIELD, 0.03, 0.9, 0.8, 0.97);
            b.push(BUTTON, 0.83, 0.9, 0.97, 0.97);
            let units = extra.div_ceil(2);
            for (i, (y0, y1)) in rows(0.11, 0.87, units, 0.08, 0.015).into_iter().enumerate() {
                let width = b.rng.random_range(0.45..0.7);
                let (x0, x1) = if i % 2 == 0 { (0.04, 0.04 + width) } else { (0.96 - width, 0.96) };
                b.push(CONTAINER, x0, y0, x1, y1);
                b.push(LABEL, x0 + 0.03, y0 + (y1 - y0) * 0.2, x1 - 0.03, y1 - (y1 - y0) * 0.2);
            }
        }
        Screen::Product => {
            b.toolbar(false);
            let img = b.rng.random_range(0.35..0.45);
            b.push(IMAGE, 0.04, 0.11, 0.96, 0.11 + img);
            let y = 0.14 + img;
            b.push(LABEL, 0.05, y, 0.75, y + 0.05);
            b.push(LABEL, 0.05, y + 0.06, 0.35, y + 0.1);
            b.push(BUTTON, 0.05, 0.9, 0.95, 0.97);
            for (y0, y1) in rows(y + 0.13, 0.87, extra, 0.035, 0.01) {
                b.push(LABEL, 0.05, y0, 0.95, y1);
            }
        }
        Screen::Shopping => {
            b.toolbar(true);
            b.push(BUTTON, 0.6, 0.9, 0.95, 0.97);
            let units = extra.div_ceil(2);
            for (y0, y1) in rows(0.11, 0.87, units, 0.06, 0.012) {
                let s = (y1 - y0) * 0.8;
                b.push(CHECKBOX, 0.05, y0 + (y1 - y0 - s) / 2.0, 0.05 + s.min(0.07), y0 + (y1 - y0 + s) / 2.0);
                b.push(LABEL, 0.16, y0 + (y1 - y0) * 0.2, 0.85, y1 - (y1 - y0) * 0.2);
            }
        }
        Screen::Profile => {
            let th = b.toolbar(false);
            let r = b.rng.random_range(0.1..0.14);
            b.push(IMAGE, 0.5 - r, th + 0.03, 0.5 + r, th + 0.03 + 2.0 * r * 0.55);
            let y = th + 0.05 + 2.0 * r * 0.55;
            b.push(LABEL, 0.25, y, 0.75, y + 0.045);
            b.push(LABEL, 0.15, y + 0.055, 0.85, y + 0.09);
            let units = extra.div_ceil(2);
            for (y0, y1) in rows(y + 0.12, 0.98, units, 0.07, 0.01) {
                b.push(LIST_ITEM, 0.0, y0, 1.0, y1);
                b.push(ICON, 0.04, y0 + (y1 - y0) * 0.2, 0.12, y1 - (y1 - y0) * 0.2);
            }
        }
        Screen::Music => {
            let art = b.rng.random_range(0.3..0.4);
            b.push(IMAGE, 0.5 - art / 1.2, 0.05, 0.5 + art / 1.2, 0.05 + art);
            let y = 0.08 + art;
            b.push(LABEL, 0.15, y, 0.85, y + 0.045);
            b.push(LABEL, 0.25, y + 0.055, 0.75, y + 0.085);
            for k in 0..3 {
                let cx = 0.3 + 0.2 * k as f64;
                b.push(ICON, cx - 0.05, y + 0.11, cx + 0.05, y + 0.17);
            }
            for (y0, y1) in rows(y + 0.21, 0.98, extra, 0.06, 0.008) {
                b.push(LIST_ITEM, 0.02, y0, 0.98, y1);
            }
        }
    }
    let mut els = b.els;
    els.truncate(m);
    els
}

fn prompts_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_file_name("prompts.json")
}

/// Writes the JSONL layouts plus the `prompts.json` sidecar next to them.
pub fn write_corpus(path: &Path, corpus: &Corpus, registry: &ClassRegistry) -> Result<()> {
    corpus.check_prompts()?;
    write_layouts_jsonl(path, &corpus.layouts, registry)?;
    let p = prompts_path(path);
    fs::write(&p, serde_json::to_vec_pretty(&corpus.prompts)?).map_err(|e| Error::io(&p, e))
}

/// Reads a corpus written by [`write_corpus`] or any producer of the same schema.
pub fn read_corpus(path: &Path, registry: &ClassRegistry) -> Result<Corpus> {
    let layouts = read_layouts_jsonl(path, registry)?;
    let p = prompts_path(path);
    let prompts: BTreeMap<String, String> = match fs::read(&p) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(Error::io(&p, e)),
    };
    let corpus = Corpus { layouts, prompts, provenance: Provenance::Imported };
    corpus.check_prompts()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_element_count_tracks_target() {
        let c = gen_corpus(&CorpusConfig { n_layouts: 1000, ..CorpusConfig::default() }, 0).unwrap();
        let mean = c.layouts.iter().map(Layout::len).sum::<usize>() as f64 / 1000.0;
        assert!((9.9..=12.9).contains(&mean), "mean {mean}");
    }

    #[test]
    fn generated_layouts_are_valid_and_prompts_resolve() {
        let r = ClassRegistry::default();
        let c = gen_corpus(&CorpusConfig { n_layouts: 400, ..CorpusConfig::default() }, 3).unwrap();
        for l in &c.layouts {
            assert!(validate_layout(l, &r).is_empty(), "{l:?}");
        }
        c.check_prompts().unwrap();
        assert_eq!(c.prompts.len(), 8);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = CorpusConfig { n_layouts: 50, ..CorpusConfig::default() };
        assert_eq!(gen_corpus(&cfg, 7).unwrap(), gen_corpus(&cfg, 7).unwrap());
        assert_ne!(gen_corpus(&cfg, 7).unwrap(), gen_corpus(&cfg, 8).unwrap());
    }

    #[test]
    fn impossible_configs_are_rejected() {
        assert!(gen_corpus(&CorpusConfig { n_layouts: 0, ..CorpusConfig::default() }, 0).is_err());
        assert!(gen_corpus(&CorpusConfig { mean_elements: 40.0, ..CorpusConfig::default() }, 0).is_err());
        assert!(gen_corpus(&CorpusConfig { screens: vec![], ..CorpusConfig::default() }, 0).is_err());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let r = ClassRegistry::default();
        let c = gen_corpus(&CorpusConfig { n_layouts: 30, ..CorpusConfig::default() }, 1).unwrap();
        write_corpus(&path, &c, &r).unwrap();
        let back = read_corpus(&path, &r).unwrap();
        assert_eq!(back.layouts, c.layouts);
        assert_eq!(back.prompts, c.prompts);
    }
}
