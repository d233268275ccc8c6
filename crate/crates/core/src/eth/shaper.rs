//! Credit-based shaper for the AVB class.
//!
//! Credit is an `i64` in units of bit·10⁻⁹: a slope in bit/s integrated over
//! nanoseconds. One bit of credit is [`CREDIT_PER_BIT`] units.

use thiserror::Error;

use crate::time::{BitRate, SimDuration, SimTime};

pub const CREDIT_PER_BIT: i64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShaperError {
    #[error("idle slope {idle} must lie strictly between 0 and the link rate {link}")]
    InvalidSlope { idle: BitRate, link: BitRate },
    #[error("credit update at {now} precedes last update at {last}")]
    ClockRegression { now: SimTime, last: SimTime },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreditState {
    credit: i64,
    idle_slope: BitRate,
    link_rate: BitRate,
    last_update: SimTime,
}

impl CreditState {
    pub fn new(idle_slope: BitRate, link_rate: BitRate) -> Result<Self, ShaperError> {
        if idle_slope >= link_rate {
            return Err(ShaperError::InvalidSlope {
                idle: idle_slope,
                link: link_rate,
            });
        }
        Ok(CreditState {
            credit: 0,
            idle_slope,
            link_rate,
            last_update: SimTime::ZERO,
        })
    }

    pub fn with_credit(mut self, credit: i64, at: SimTime) -> Self {
        self.credit = credit;
        self.last_update = at;
        self
    }

    pub fn credit(&self) -> i64 {
        self.credit
    }

    pub fn credit_bits(&self) -> f64 {
        self.credit as f64 / CREDIT_PER_BIT as f64
    }

    pub fn idle_slope(&self) -> BitRate {
        self.idle_slope
    }

    /// Negative: `idle_slope - link_rate` in bit/s.
    pub fn send_slope(&self) -> i64 {
        self.idle_slope.bps() as i64 - self.link_rate.bps() as i64
    }

    pub fn last_update(&self) -> SimTime {
        self.last_update
    }

    /// Integrates credit over `[last_update, now]`. The flags describe the
    /// port during that whole interval.
    pub fn update(
        &mut self,
        now: SimTime,
        transmitting_avb: bool,
        avb_q_empty: bool,
    ) -> Result<(), ShaperError> {
        let dt = now
            .checked_since(self.last_update)
            .ok_or(ShaperError::ClockRegression {
                now,
                last: self.last_update,
            })?;
        let dt = dt.as_nanos() as i128;
        let slope = if transmitting_avb {
            self.send_slope() as i128
        } else if !avb_q_empty || self.credit < 0 {
            self.idle_slope.bps() as i128
        } else {
            0
        };
        let next = self.credit as i128 + slope * dt;
        self.credit = next.clamp(i64::MIN as i128, i64::MAX as i128) as i64;
        if avb_q_empty && self.credit > 0 {
            self.credit = 0;
        }
        self.last_update = now;
        Ok(())
    }

    /// Time until a negative credit climbs back to zero at the idle slope.
    pub fn time_to_zero(&self) -> SimDuration {
        if self.credit >= 0 {
            return SimDuration::ZERO;
        }
        let deficit = self.credit.unsigned_abs();
        SimDuration::from_nanos(deficit.div_ceil(self.idle_slope.bps()))
    }
}
