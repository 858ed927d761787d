use crate::element::{Element, ElementSet};
use crate::error::{Error, Result};
use crate::grad::{ElementGradient, ParamGradients};

use super::config::OptimizationConfig;

/// Moments of one parameter group with its own step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Adam accumulators mirroring an [`ElementSet`]: per element the flattened
/// `(t, c, theta, z, o)` parameters, and `(b, z_0)` for the background.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub elements: Vec<Moments>,
    pub background: Moments,
}

fn element_len(e: &Element) -> usize {
    e.type_logits.len() + 7
}

impl AdamState {
    pub fn new(set: &ElementSet) -> Self {
        Self {
            elements: set.elements.iter().map(|e| Moments::zeros(element_len(e))).collect(),
            background: Moments::zeros(4),
        }
    }

    /// Keep the moments of surviving elements after a prune.
    pub fn remap(&mut self, mapping: &[Option<usize>]) {
        let mut kept: Vec<(usize, Moments)> = mapping
            .iter()
            .zip(self.elements.drain(..))
            .filter_map(|(to, m)| to.map(|t| (t, m)))
            .collect();
        kept.sort_by_key(|(t, _)| *t);
        self.elements = kept.into_iter().map(|(_, m)| m).collect();
    }

    /// Fresh moments for elements appended to `set` since the last sync.
    pub fn extend_to(&mut self, set: &ElementSet) {
        for e in &set.elements[self.elements.len()..] {
            self.elements.push(Moments::zeros(element_len(e)));
        }
    }
}

/// Which parameter classes move, and by how much.
#[derive(Clone, Copy, Debug)]
struct Rates {
    t: f64,
    c: f64,
    theta: f64,
    z: f64,
    o: f64,
    background: bool,
}

impl Rates {
    fn from_config(config: &OptimizationConfig, canvas: (usize, usize)) -> Self {
        let m = config.multipliers;
        let lr = config.base_lr;
        let scale = if config.normalized_centers {
            canvas.0.max(canvas.1) as f64
        } else {
            1.0
        };
        Self {
            t: lr * m.type_logits,
            c: lr * m.center * scale,
            theta: if config.optimize_orientation { lr * m.orientation } else { 0.0 },
            z: lr * m.depth,
            o: if config.optimize_color { lr * m.color } else { 0.0 },
            background: config.optimize_background,
        }
    }
}

#[inline]
fn adam_update(
    param: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    corr: (f64, f64),
    config: &OptimizationConfig,
) {
    let (b1, b2) = config.betas;
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    if lr == 0.0 {
        return;
    }
    let mh = *m / corr.0;
    let vh = *v / corr.1;
    *param -= lr * mh / (vh.sqrt() + config.epsilon);
}

fn check_finite(grads: &ParamGradients) -> Result<()> {
    if let Some((class, element)) = grads.first_non_finite() {
        let what = match element {
            Some(i) => format!("{} of element {}", class.name(), i),
            None => class.name().to_string(),
        };
        return Err(Error::NonFiniteGradient(what));
    }
    Ok(())
}

fn step_element(e: &mut Element, g: &ElementGradient, mo: &mut Moments, rates: &Rates, config: &OptimizationConfig) {
    mo.step += 1;
    let t = mo.step as i32;
    let corr = (1.0 - config.betas.0.powi(t), 1.0 - config.betas.1.powi(t));
    let k = e.type_logits.len();
    let (m, v) = (&mut mo.m, &mut mo.v);
    for j in 0..k {
        adam_update(&mut e.type_logits[j], g.d_type_logits[j], &mut m[j], &mut v[j], rates.t, corr, config);
    }
    for a in 0..2 {
        adam_update(&mut e.center[a], g.d_center[a], &mut m[k + a], &mut v[k + a], rates.c, corr, config);
    }
    adam_update(&mut e.orientation, g.d_orientation, &mut m[k + 2], &mut v[k + 2], rates.theta, corr, config);
    adam_update(&mut e.depth, g.d_depth, &mut m[k + 3], &mut v[k + 3], rates.z, corr, config);
    for c in 0..3 {
        adam_update(&mut e.color[c], g.d_color[c], &mut m[k + 4 + c], &mut v[k + 4 + c], rates.o, corr, config);
    }
}

/// One Adam update of every unfrozen parameter. Fails before touching the
/// set if any gradient is non-finite.
pub fn adam_step(
    state: &mut AdamState,
    set: &mut ElementSet,
    grads: &ParamGradients,
    config: &OptimizationConfig,
    frozen: &[bool],
) -> Result<()> {
    if grads.elements.len() != set.elements.len() || state.elements.len() != set.elements.len() {
        return Err(Error::Shape(format!(
            "{} element gradients and {} moment groups for {} elements",
            grads.elements.len(),
            state.elements.len(),
            set.elements.len()
        )));
    }
    check_finite(grads)?;
    let rates = Rates::from_config(config, set.canvas);
    for (i, ((e, g), mo)) in set
        .elements
        .iter_mut()
        .zip(&grads.elements)
        .zip(&mut state.elements)
        .enumerate()
    {
        if !e.alive || frozen.get(i).copied().unwrap_or(false) {
            continue;
        }
        step_element(e, g, mo, &rates, config);
    }
    if rates.background {
        let mo = &mut state.background;
        mo.step += 1;
        let t = mo.step as i32;
        let corr = (1.0 - config.betas.0.powi(t), 1.0 - config.betas.1.powi(t));
        let color_lr = config.base_lr * config.multipliers.color;
        for c in 0..3 {
            adam_update(
                &mut set.background_color[c],
                grads.d_background_color[c],
                &mut mo.m[c],
                &mut mo.v[c],
                color_lr,
                corr,
                config,
            );
        }
        adam_update(
            &mut set.background_depth,
            grads.d_background_depth,
            &mut mo.m[3],
            &mut mo.v[3],
            rates.z,
            corr,
            config,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::config::Preset;

    fn setup() -> (ElementSet, AdamState, ParamGradients) {
        let mut set = ElementSet::new((64, 64), [0.5; 3]);
        set.elements.push(Element::new(2, [10.0, 20.0]));
        set.elements.push(Element::new(2, [30.0, 40.0]));
        let state = AdamState::new(&set);
        let grads = ParamGradients::zeros_like(&set);
        (set, state, grads)
    }

    #[test]
    fn first_step_has_unit_normalized_size() {
        let (mut set, mut state, mut grads) = setup();
        let config = OptimizationConfig::preset(Preset::Paper);
        grads.elements[0].d_orientation = 3.7;
        grads.elements[1].d_orientation = -0.02;
        adam_step(&mut state, &mut set, &grads, &config, &[]).unwrap();
        let want = config.base_lr * 2.25;
        assert!((set.elements[0].orientation + want).abs() < want * 1e-6);
        assert!((set.elements[1].orientation - want).abs() < want * 1e-5);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let (mut set, mut state, grads) = setup();
        let before = set.clone();
        adam_step(&mut state, &mut set, &grads, &OptimizationConfig::default(), &[]).unwrap();
        assert_eq!(set, before);
    }

    #[test]
    fn frozen_elements_do_not_move() {
        let (mut set, mut state, mut grads) = setup();
        grads.elements[0].d_center = [1.0, 1.0];
        grads.elements[1].d_center = [1.0, 1.0];
        adam_step(&mut state, &mut set, &grads, &OptimizationConfig::default(), &[true, false]).unwrap();
        assert_eq!(set.elements[0].center, [10.0, 20.0]);
        assert!(set.elements[1].center[0] < 30.0);
        assert_eq!(state.elements[0].step, 0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut set, mut state, mut grads) = setup();
        grads.elements[1].d_depth = f64::NAN;
        let err = adam_step(&mut state, &mut set, &grads, &OptimizationConfig::default(), &[]).unwrap_err();
        assert!(err.to_string().contains("depth of element 1"), "{err}");
    }

    #[test]
    fn remap_keeps_survivors_in_order() {
        let (mut set, mut state, _) = setup();
        set.elements.push(Element::new(2, [1.0, 1.0]));
        state.extend_to(&set);
        state.elements[2].step = 7;
        state.elements[0].step = 3;
        state.remap(&[None, None, Some(0)]);
        assert_eq!(state.elements.len(), 1);
        assert_eq!(state.elements[0].step, 7);
    }
}
