#![allow(dead_code)]
//! Independent oracles: boxes live on a 0.1 lattice so a brute-force raster
//! of 0.1 cells represents every union exactly.

use rand::seq::SliceRandom;
use rand::Rng;
use selfevo_core::mape::AdaptationOption;
use selfevo_core::odd::TargetOrigin;
use selfevo_core::{ConfigurationOdd, EvolutionTarget, Interval, OddModel, Region, WorkingPoint};

/// A box in tenths: `[c0, c1] × [u0, u1]`, `c0 < c1`, `u0 < u1`.
#[derive(Debug, Clone, Copy)]
pub struct TenthBox {
    pub c0: i64,
    pub c1: i64,
    pub u0: i64,
    pub u1: i64,
}

impl TenthBox {
    pub fn region(&self) -> Region {
        Region::new(
            self.c0 as f64 / 10.0,
            self.c1 as f64 / 10.0,
            self.u0 as f64 / 10.0,
            self.u1 as f64 / 10.0,
        )
        .unwrap()
    }

    /// Whether the 0.1 cell with lower corner `(i, j)` lies inside.
    fn holds_cell(&self, i: i64, j: i64) -> bool {
        self.c0 <= i && i < self.c1 && self.u0 <= j && j < self.u1
    }

    pub fn contains(&self, p: &WorkingPoint) -> bool {
        let (c, u) = (p.context(), p.utility());
        let t = |x: i64| x as f64 / 10.0;
        t(self.c0) <= c && c <= t(self.c1) && t(self.u0) <= u && u <= t(self.u1)
    }
}

pub fn random_box<R: Rng>(rng: &mut R, min_width: i64) -> TenthBox {
    let w = rng.random_range(min_width..=300);
    let h = rng.random_range(min_width..=300);
    let c0 = rng.random_range(-600..=-w);
    let u0 = rng.random_range(0..=500);
    TenthBox {
        c0,
        c1: c0 + w,
        u0,
        u1: u0 + h,
    }
}

pub struct RandomModel {
    pub model: OddModel,
    pub boxes: Vec<Vec<TenthBox>>,
}

pub fn random_model<R: Rng>(rng: &mut R) -> RandomModel {
    let n = rng.random_range(1..=5);
    let mut boxes = Vec::new();
    let mut configs = Vec::new();
    for k in 0..n {
        let bs: Vec<TenthBox> = (0..rng.random_range(1..=4))
            .map(|_| random_box(rng, 1))
            .collect();
        let lo = rng.random_range(0.1..10.0);
        configs.push(
            ConfigurationOdd::new(
                format!("cfg-{k}"),
                bs.iter().map(TenthBox::region).collect(),
                Interval::new(lo, lo + rng.random_range(0.0..5.0)).unwrap(),
            )
            .unwrap(),
        );
        boxes.push(bs);
    }
    RandomModel {
        model: OddModel::new(configs, 1).unwrap(),
        boxes,
    }
}

/// A point on the 0.1 lattice or anywhere, half and half, over a window
/// slightly wider than where boxes are drawn.
pub fn random_point<R: Rng>(rng: &mut R) -> WorkingPoint {
    if rng.random_bool(0.5) {
        WorkingPoint::new(
            rng.random_range(0..=800) as f64 / 10.0,
            -(rng.random_range(0..=600) as f64) / 10.0,
        )
        .unwrap()
    } else {
        WorkingPoint::new(rng.random_range(0.0..80.0), rng.random_range(-60.0..=0.0)).unwrap()
    }
}

/// Per-sample bounds on grid coverage. A sample whose one-grid-cell
/// neighbourhood is entirely covered by the raster must be covered; one whose
/// neighbourhood touches no covered raster cell must not be.
pub struct RasterBracket {
    pub lower: usize,
    pub upper: usize,
    pub total: usize,
    /// Raster area fraction of the target.
    pub area_fraction: f64,
}

/// Rasterizes `boxes` over `target` (in tenths, sides of at least 20 tenths
/// so that grid spacing is never finer than the raster) and brackets the
/// number of `n × n` grid samples the union covers.
pub fn raster_bracket(boxes: &[TenthBox], target: TenthBox, n: usize) -> RasterBracket {
    let covered = |i: i64, j: i64| boxes.iter().any(|b| b.holds_cell(i, j));
    let mut area = 0usize;
    for i in target.c0..target.c1 {
        for j in target.u0..target.u1 {
            area += covered(i, j) as usize;
        }
    }
    let cells = ((target.c1 - target.c0) * (target.u1 - target.u0)) as f64;

    let hc = (target.c1 - target.c0) as f64 / (n - 1) as f64;
    let hu = (target.u1 - target.u0) as f64 / (n - 1) as f64;
    let (mut lower, mut upper) = (0, 0);
    for kc in 0..n {
        let x = target.c0 as f64 + hc * kc as f64;
        for ku in 0..n {
            let y = target.u0 as f64 + hu * ku as f64;
            let (i0, i1) = ((x - hc).floor() as i64, (x + hc).ceil() as i64);
            let (j0, j1) = ((y - hu).floor() as i64, (y + hu).ceil() as i64);
            let mut all = true;
            let mut any = false;
            for i in i0..i1 {
                for j in j0..j1 {
                    let c = covered(i, j);
                    all &= c;
                    any |= c;
                }
            }
            lower += all as usize;
            upper += any as usize;
        }
    }
    RasterBracket {
        lower,
        upper,
        total: n * n,
        area_fraction: area as f64 / cells,
    }
}

pub fn target_of(b: TenthBox) -> EvolutionTarget {
    EvolutionTarget::new(vec![b.region()], TargetOrigin::StakeholderGoal, 0).unwrap()
}

/// Exhaustive argmax: the highest lifetime lower bound, then upper bound,
/// then the incumbent, then the smallest id.
pub fn brute_force_choice(options: &[AdaptationOption], incumbent: &str) -> Option<String> {
    let mut best: Option<&AdaptationOption> = None;
    for o in options {
        let better = match best {
            None => true,
            Some(b) => {
                let key = |x: &AdaptationOption| {
                    (
                        x.lifetime_years.lo(),
                        x.lifetime_years.hi(),
                        x.config_id == incumbent,
                    )
                };
                let (ko, kb) = (key(o), key(b));
                ko.0 > kb.0
                    || (ko.0 == kb.0 && ko.1 > kb.1)
                    || (ko.0 == kb.0 && ko.1 == kb.1 && ko.2 && !kb.2)
                    || (ko.0 == kb.0 && ko.1 == kb.1 && ko.2 == kb.2 && o.config_id < b.config_id)
            }
        };
        if better {
            best = Some(o);
        }
    }
    best.map(|o| o.config_id.clone())
}

pub fn random_options<R: Rng>(rng: &mut R) -> Vec<AdaptationOption> {
    let n = rng.random_range(0..=6);
    let mut ids: Vec<usize> = (0..10).collect();
    ids.shuffle(rng);
    (0..n)
        .map(|k| {
            // coarse values so ties actually happen
            let lo = rng.random_range(1..=6) as f64 * 0.5;
            let hi = lo + rng.random_range(0..=4) as f64 * 0.5;
            AdaptationOption {
                config_id: format!("opt-{}", ids[k]),
                lifetime_years: Interval::new(lo, hi).unwrap(),
            }
        })
        .collect()
}
