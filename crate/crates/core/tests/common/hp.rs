//! Fixed-point arbitrary-precision arithmetic, enough for `exp` and `ln`.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

const BITS: u32 = 320;

#[derive(Clone, Debug, PartialEq)]
pub struct Hp(BigInt);

impl Hp {
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Hp(BigInt::zero());
        }
        let bits = x.abs().to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let (mant, e) = if exp == 0 {
            (bits & ((1 << 52) - 1), -1074)
        } else {
            ((bits & ((1 << 52) - 1)) | (1 << 52), exp - 1075)
        };
        let shift = e + BITS as i64;
        let m = BigInt::from(mant);
        let v = if shift >= 0 { m << shift as usize } else { m >> (-shift) as usize };
        Hp(if x < 0.0 { -v } else { v })
    }

    pub fn int(n: i64) -> Self {
        Hp(BigInt::from(n) << BITS as usize)
    }

    pub fn to_f64(&self) -> f64 {
        // keep 64 significant bits before converting
        let bits = self.0.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (&self.0 >> drop as usize).to_f64().unwrap();
        top * 2f64.powi((drop - BITS as i64) as i32)
    }

    pub fn add(&self, o: &Hp) -> Hp {
        Hp(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Hp) -> Hp {
        Hp(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Hp) -> Hp {
        Hp((&self.0 * &o.0) >> BITS as usize)
    }

    pub fn div(&self, o: &Hp) -> Hp {
        Hp((&self.0 << BITS as usize) / &o.0)
    }

    fn is_tiny(&self) -> bool {
        self.0.abs() < BigInt::from(4)
    }

    fn atanh_series(z: &Hp) -> Hp {
        let z2 = z.mul(z);
        let mut term = z.clone();
        let mut acc = z.clone();
        let mut k = 1i64;
        loop {
            term = term.mul(&z2);
            k += 2;
            let t = Hp(&term.0 / BigInt::from(k));
            if t.is_tiny() {
                return acc;
            }
            acc = acc.add(&t);
        }
    }

    pub fn ln2() -> Hp {
        let third = Hp::int(1).div(&Hp::int(3));
        let a = Hp::atanh_series(&third);
        a.add(&a)
    }

    pub fn ln(&self) -> Hp {
        assert!(self.0 > BigInt::zero());
        let one = BigInt::one() << BITS as usize;
        let mut k: i64 = self.0.bits() as i64 - BITS as i64 - 1;
        let mut y = if k >= 0 { Hp(&self.0 >> k as usize) } else { Hp(&self.0 << (-k) as usize) };
        while y.0 >= (&one << 1usize) {
            y = Hp(&y.0 >> 1usize);
            k += 1;
        }
        while y.0 < one {
            y = Hp(&y.0 << 1usize);
            k -= 1;
        }
        let one = Hp(one);
        let z = y.sub(&one).div(&y.add(&one));
        let s = Hp::atanh_series(&z);
        Hp(&Hp::ln2().0 * BigInt::from(k)).add(&s.add(&s))
    }

    pub fn exp(&self) -> Hp {
        let ln2 = Hp::ln2();
        let k = (self.to_f64() / std::f64::consts::LN_2).round() as i64;
        let r = self.sub(&Hp(&ln2.0 * BigInt::from(k)));
        let mut term = Hp::int(1);
        let mut acc = Hp::int(1);
        let mut n = 0i64;
        loop {
            n += 1;
            term = Hp(&term.mul(&r).0 / BigInt::from(n));
            if term.is_tiny() {
                break;
            }
            acc = acc.add(&term);
        }
        if k >= 0 {
            Hp(acc.0 << k as usize)
        } else {
            Hp(acc.0 >> (-k) as usize)
        }
    }

    /// `x^y = exp(y ln x)` for `x > 0`.
    pub fn pow(&self, y: &Hp) -> Hp {
        y.mul(&self.ln()).exp()
    }
}

