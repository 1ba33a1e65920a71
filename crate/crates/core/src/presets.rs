//! The four reference regimes: plain fast mean-reverting volatility, then
//! the same group parameters run on a compound-Poisson clock, an integrated
//! CIR clock, and their composition.

use crate::pricing::PricingRequest;
use crate::spectral::GroupParams;
use crate::timechange::{CirClock, Clock, LevyExpCP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

pub const SIGMA: f64 = 0.34;
pub const V2_EPS: f64 = 0.03;
pub const V3_EPS: f64 = -0.03;

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Fig1, Preset::Fig2, Preset::Fig3, Preset::Fig4];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name.trim())
    }

    pub fn params(&self) -> GroupParams {
        GroupParams {
            sigma: SIGMA,
            v2_eps: V2_EPS,
            v3_eps: V3_EPS,
        }
    }

    pub fn clock(&self) -> Clock {
        match self {
            Preset::Fig1 => Clock::Identity,
            Preset::Fig2 => Clock::levy(LevyExpCP {
                drift: 0.25,
                intensity: 0.75,
                jump_rate: 0.10,
            }),
            Preset::Fig3 => Clock::Cir(CirClock {
                kappa: 1.0,
                theta: 1.0,
                vol2: 2.0,
                z0: 2.0,
            }),
            Preset::Fig4 => Clock::composite(
                LevyExpCP {
                    drift: 0.05,
                    intensity: 0.5,
                    jump_rate: 0.5,
                },
                CirClock {
                    kappa: 2.0,
                    theta: 1.0,
                    vol2: 4.0,
                    z0: 4.0,
                },
            ),
        }
    }

    /// Spot 1, zero rates; strike and maturity to be filled in.
    pub fn request(&self, k: f64, t: f64) -> PricingRequest {
        PricingRequest::call(0.0, k, 0.0, t, self.params(), self.clock())
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
