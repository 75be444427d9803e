//! Deterministic synthetic multi-label image data.
//!
//! Each image carries one to three class glyphs. Context labels come in two
//! kinds: two noisy "implied" labels per class (set with probability 0.9 when
//! the class is present) and eight scene labels, each tied to a visual
//! transform of the whole image.

mod glyphs;
mod io;

pub use glyphs::{glyph, GLYPH_COUNT, GLYPH_SIZE};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{sample_without_replacement, Rng};
use crate::par;

pub const SCENE_LABELS: usize = 8;
pub const IMPLIED_PROB: f64 = 0.9;
pub const SCENE_PROB: f64 = 0.35;
pub const GLYPH_INTENSITY: f32 = 0.8;
pub const BASE_BACKGROUND: f32 = 0.1;

/// Scene transforms, in the order of their context-label slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scene {
    /// Background level +0.2.
    Background = 0,
    /// Gaussian pixel noise, sigma 0.05.
    Noise = 1,
    /// 3x3 box blur.
    Blur = 2,
    /// Contrast inversion about the image mean.
    Inversion = 3,
    /// Brightened 2-pixel border.
    Frame = 4,
    HorizontalGradient = 5,
    VerticalGradient = 6,
    /// Glyph intensity halved.
    Dimming = 7,
}

impl Scene {
    pub const ALL: [Scene; SCENE_LABELS] = [
        Scene::Background,
        Scene::Noise,
        Scene::Blur,
        Scene::Inversion,
        Scene::Frame,
        Scene::HorizontalGradient,
        Scene::VerticalGradient,
        Scene::Dimming,
    ];

    /// Context-label index of this scene for `n_c` classes.
    pub fn label(self, n_c: usize) -> usize {
        2 * n_c + self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Scene::Background => "background",
            Scene::Noise => "noise",
            Scene::Blur => "blur",
            Scene::Inversion => "inversion",
            Scene::Frame => "frame",
            Scene::HorizontalGradient => "hgrad",
            Scene::VerticalGradient => "vgrad",
            Scene::Dimming => "dimming",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_tag(tag: u8) -> Option<Split> {
        Split::ALL.into_iter().find(|s| *s as u8 == tag)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_c: usize,
    pub n_l: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_c: 8,
            n_l: 24,
            height: 32,
            width: 32,
            channels: 1,
            n_train: 4096,
            n_val: 1024,
            n_test: 1024,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_c < 2 || self.n_c > GLYPH_COUNT {
            return bad(format!("n_c = {} (recipe supports 2..={GLYPH_COUNT})", self.n_c));
        }
        if self.n_l != 2 * self.n_c + SCENE_LABELS {
            return bad(format!(
                "n_l = {} but the recipe needs 2 * n_c + {SCENE_LABELS} = {}",
                self.n_l,
                2 * self.n_c + SCENE_LABELS
            ));
        }
        if self.height < GLYPH_SIZE || self.width < GLYPH_SIZE {
            return bad(format!(
                "image {}x{} is smaller than a {GLYPH_SIZE}x{GLYPH_SIZE} glyph",
                self.height, self.width
            ));
        }
        if self.channels == 0 || self.n_train == 0 {
            return bad("channels and n_train must be positive".into());
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Images with binary class and context label masks.
///
/// Pixels are stored channel-major per image (`C x H x W`), images back to
/// back. Label masks are flat `len x n_c` and `len x n_l` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_c: usize,
    pub n_l: usize,
    pixels: Vec<f32>,
    class_labels: Vec<bool>,
    context_labels: Vec<bool>,
    splits: Vec<Split>,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        n_c: usize,
        n_l: usize,
        pixels: Vec<f32>,
        class_labels: Vec<bool>,
        context_labels: Vec<bool>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = splits.len();
        if pixels.len() != n * height * width * channels
            || class_labels.len() != n * n_c
            || context_labels.len() != n * n_l
        {
            return Err(Error::Shape("dataset parts disagree on sample count".into()));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("dataset pixels".into()));
        }
        Ok(Dataset {
            height,
            width,
            channels,
            n_c,
            n_l,
            pixels,
            class_labels,
            context_labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, k: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[k * n..(k + 1) * n]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn classes(&self, k: usize) -> &[bool] {
        &self.class_labels[k * self.n_c..(k + 1) * self.n_c]
    }

    pub fn context(&self, k: usize) -> &[bool] {
        &self.context_labels[k * self.n_l..(k + 1) * self.n_l]
    }

    pub fn split(&self, k: usize) -> Split {
        self.splits[k]
    }

    pub fn class_set(&self, k: usize) -> Vec<usize> {
        ones(self.classes(k))
    }

    pub fn context_set(&self, k: usize) -> Vec<usize> {
        ones(self.context(k))
    }

    /// Sample indices belonging to `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.splits[k] == split).collect()
    }

    /// Gathers the images of `ids` into one contiguous buffer.
    pub fn gather_images(&self, ids: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(ids.len() * self.image_len());
        for &k in ids {
            out.extend_from_slice(self.image(k));
        }
        out
    }

    /// Removes context label `k` from every mask. Returns the reduced dataset
    /// and the removed bit per sample.
    pub fn holdout_context_label(&self, k: usize) -> Result<(Dataset, Vec<bool>)> {
        if k >= self.n_l {
            return Err(Error::InvalidArgument(format!(
                "context label {k} out of range (n_l = {})",
                self.n_l
            )));
        }
        let n_l = self.n_l - 1;
        let mut context = Vec::with_capacity(self.len() * n_l);
        let mut targets = Vec::with_capacity(self.len());
        for s in 0..self.len() {
            let row = self.context(s);
            targets.push(row[k]);
            context.extend(row.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &b)| b));
        }
        let mut reduced = self.clone();
        reduced.n_l = n_l;
        reduced.context_labels = context;
        Ok((reduced, targets))
    }

    /// Replaces the context masks (used to make class labels the environment
    /// label pool).
    pub fn with_context_labels(&self, n_l: usize, labels: Vec<bool>) -> Result<Dataset> {
        if labels.len() != self.len() * n_l {
            return Err(Error::Shape("context mask length".into()));
        }
        let mut out = self.clone();
        out.n_l = n_l;
        out.context_labels = labels;
        Ok(out)
    }

    pub fn class_labels_flat(&self) -> &[bool] {
        &self.class_labels
    }

    pub fn context_labels_flat(&self) -> &[bool] {
        &self.context_labels
    }
}

pub(crate) fn ones(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

struct GeneratedSample {
    pixels: Vec<f32>,
    classes: Vec<bool>,
    context: Vec<bool>,
}

/// Generates the dataset described by `spec`. A pure function of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut pixels = Vec::new();
    let mut class_labels = Vec::new();
    let mut context_labels = Vec::new();
    let mut splits = Vec::new();
    for (split, count) in [
        (Split::Train, spec.n_train),
        (Split::Val, spec.n_val),
        (Split::Test, spec.n_test),
    ] {
        let samples = par::try_map_range(count, |i| {
            let mut rng = root.child_indexed(split.name(), i as u64);
            render_sample(spec, &mut rng)
        })?;
        for s in samples {
            pixels.extend(s.pixels);
            class_labels.extend(s.classes);
            context_labels.extend(s.context);
            splits.push(split);
        }
    }
    let ds = Dataset::from_parts(
        spec.height,
        spec.width,
        spec.channels,
        spec.n_c,
        spec.n_l,
        pixels,
        class_labels,
        context_labels,
        splits,
    )?;
    check_label_coverage(&ds)?;
    Ok(ds)
}

/// Every class and context label must appear in at least 1% of the
/// training samples.
fn check_label_coverage(ds: &Dataset) -> Result<()> {
    let train = ds.indices(Split::Train);
    let need = (train.len() as f64 * 0.01).ceil().max(1.0) as usize;
    for c in 0..ds.n_c {
        let n = train.iter().filter(|&&k| ds.classes(k)[c]).count();
        if n < need {
            return Err(Error::InvalidArgument(format!(
                "class {c} occurs in {n} training samples, fewer than {need}; choose another seed or a larger split"
            )));
        }
    }
    for l in 0..ds.n_l {
        let n = train.iter().filter(|&&k| ds.context(k)[l]).count();
        if n < need {
            return Err(Error::InvalidArgument(format!(
                "context label {l} occurs in {n} training samples, fewer than {need}; choose another seed or a larger split"
            )));
        }
    }
    Ok(())
}

fn render_sample(spec: &DatasetSpec, rng: &mut Rng) -> Result<GeneratedSample> {
    let (h, w) = (spec.height, spec.width);
    let n_c = spec.n_c;
    let k = rng.gen_range(1..=3usize.min(n_c));
    let present = sample_without_replacement(n_c, k, rng)?;
    let positions: Vec<(usize, usize)> = present
        .iter()
        .map(|_| {
            (
                rng.gen_range(0..=h - GLYPH_SIZE),
                rng.gen_range(0..=w - GLYPH_SIZE),
            )
        })
        .collect();

    let mut classes = vec![false; n_c];
    let mut context = vec![false; spec.n_l];
    for &c in &present {
        classes[c] = true;
        context[2 * c] = rng.gen_bool(IMPLIED_PROB);
        context[2 * c + 1] = rng.gen_bool(IMPLIED_PROB);
    }
    let mut active = [false; SCENE_LABELS];
    for (s, a) in active.iter_mut().enumerate() {
        *a = rng.gen_bool(SCENE_PROB);
        context[2 * n_c + s] = *a;
    }
    let on = |s: Scene| active[s as usize];

    let background = BASE_BACKGROUND + if on(Scene::Background) { 0.2 } else { 0.0 };
    let intensity = GLYPH_INTENSITY * if on(Scene::Dimming) { 0.5 } else { 1.0 };
    let mut img = vec![background; h * w];
    for (&c, &(y0, x0)) in present.iter().zip(&positions) {
        let g = glyph(c);
        for (dy, row) in g.iter().enumerate() {
            for (dx, &bit) in row.iter().enumerate() {
                if bit {
                    let px = &mut img[(y0 + dy) * w + x0 + dx];
                    *px = px.max(background + intensity);
                }
            }
        }
    }
    if on(Scene::HorizontalGradient) {
        for y in 0..h {
            for x in 0..w {
                img[y * w + x] += 0.2 * (x as f32 / (w - 1) as f32 - 0.5);
            }
        }
    }
    if on(Scene::VerticalGradient) {
        for y in 0..h {
            for x in 0..w {
                img[y * w + x] += 0.2 * (y as f32 / (h - 1) as f32 - 0.5);
            }
        }
    }
    if on(Scene::Frame) {
        for y in 0..h {
            for x in 0..w {
                if y < 2 || x < 2 || y + 2 >= h || x + 2 >= w {
                    img[y * w + x] += 0.3;
                }
            }
        }
    }
    if on(Scene::Blur) {
        img = box_blur(&img, h, w);
    }
    if on(Scene::Inversion) {
        let mean = img.iter().map(|&v| f64::from(v)).sum::<f64>() / img.len() as f64;
        let twice = (2.0 * mean) as f32;
        img.iter_mut().for_each(|v| *v = twice - *v);
    }
    if on(Scene::Noise) {
        let normal = Normal::new(0.0f32, 0.05).expect("valid sigma");
        img.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let mut pixels = Vec::with_capacity(spec.image_len());
    for _ in 0..spec.channels {
        pixels.extend_from_slice(&img);
    }
    Ok(GeneratedSample {
        pixels,
        classes,
        context,
    })
}

/// 3x3 mean filter over the in-bounds neighbourhood.
fn box_blur(img: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    sum += img[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = sum / n;
        }
    }
    out
}
