use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BAR: f64 = 1e5;

/// Third-order fit `g(Re) = a Re^3 + b Re^2 + c Re + d` of the tubing
/// friction factor, valid on `[re_min, re_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionPoly {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub re_min: f64,
    pub re_max: f64,
}

impl FrictionPoly {
    pub fn eval(&self, re: f64) -> f64 {
        ((self.a * re + self.b) * re + self.c) * re + self.d
    }
}

/// Physical constants of one gas-lifted well. All pressures are in Pa.
#[derive(Clone, Debug, PartialEq)]
pub struct WellParameters {
    pub name: String,
    pub r: f64,
    pub g: f64,
    pub mu: f64,
    pub rho_l: f64,
    pub m_g: f64,
    pub t_an: f64,
    pub v_an: f64,
    pub l_an: f64,
    pub p_gs: f64,
    pub s_bh: f64,
    pub l_bh: f64,
    pub t_tb: f64,
    pub gor: f64,
    pub p_res: f64,
    pub w_res_bar: f64,
    pub d_tb: f64,
    pub l_tb: f64,
    pub v_tb: f64,
    pub eps: f64,
    pub pi: f64,
    pub k_gs: f64,
    pub k_inj: f64,
    pub k_pr: f64,
    pub p_out: f64,
    pub friction_poly: FrictionPoly,
}

/// On-disk layout of a well file: conventional symbols, pressures in bar.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellFile {
    pub name: String,
    pub R: f64,
    pub g: f64,
    pub mu: f64,
    pub rho_L: f64,
    pub M_G: f64,
    pub T_an: f64,
    pub V_an: f64,
    pub L_an: f64,
    pub P_gs_bar: f64,
    pub S_bh: f64,
    pub L_bh: f64,
    pub T_tb: f64,
    pub GOR: f64,
    pub P_res_bar: f64,
    pub w_res_bar: f64,
    pub D_tb: f64,
    pub L_tb: f64,
    pub V_tb: f64,
    pub eps: f64,
    pub PI: f64,
    pub K_gs: f64,
    pub K_inj: f64,
    pub K_pr: f64,
    pub P_out_bar: f64,
    pub friction_poly: FrictionPoly,
}

const WELL_FILES: [&str; 3] = [
    include_str!("../../data/wells/well1.toml"),
    include_str!("../../data/wells/well2.toml"),
    include_str!("../../data/wells/well3.toml"),
];

impl WellParameters {
    /// One of the three shipped wells (1, 2 or 3).
    pub fn well(id: u8) -> Result<Self> {
        match id {
            1..=3 => Self::from_toml_str(WELL_FILES[id as usize - 1]),
            _ => Err(Error::Config(format!("unknown well id {id}; expected 1, 2 or 3"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: WellFile = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let p = Self::from(file);
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&WellFile::from(self)).expect("well file serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("R", self.r),
            ("g", self.g),
            ("mu", self.mu),
            ("rho_L", self.rho_l),
            ("M_G", self.m_g),
            ("T_an", self.t_an),
            ("V_an", self.v_an),
            ("L_an", self.l_an),
            ("P_gs", self.p_gs),
            ("S_bh", self.s_bh),
            ("L_bh", self.l_bh),
            ("T_tb", self.t_tb),
            ("P_res", self.p_res),
            ("w_res_bar", self.w_res_bar),
            ("D_tb", self.d_tb),
            ("L_tb", self.l_tb),
            ("V_tb", self.v_tb),
            ("eps", self.eps),
            ("PI", self.pi),
            ("K_gs", self.k_gs),
            ("K_inj", self.k_inj),
            ("K_pr", self.k_pr),
            ("P_out", self.p_out),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gor.is_finite() && self.gor >= 0.0) {
            return Err(Error::Config(format!("GOR must be >= 0, got {}", self.gor)));
        }
        let fp = &self.friction_poly;
        if !(fp.re_min < fp.re_max) {
            return Err(Error::Config("friction_poly: re_min must be < re_max".into()));
        }
        Ok(())
    }

    /// Bottom-hole diameter from the cross-section below the injection point.
    pub fn d_bh(&self) -> f64 {
        (4.0 * self.s_bh / std::f64::consts::PI).sqrt()
    }

    /// Mass fraction of gas in the reservoir inflow.
    pub fn alpha_m_g_bh(&self) -> f64 {
        self.gor / (self.gor + 1.0)
    }

    pub fn u_l_bh(&self) -> f64 {
        self.w_res_bar / (self.rho_l * self.s_bh)
    }

    pub fn re_bh(&self) -> f64 {
        self.rho_l * self.u_l_bh() * self.d_bh() / self.mu
    }

    /// Constant bottom-hole friction factor.
    pub fn lambda_bh(&self) -> f64 {
        colebrook_haaland(self.eps, self.d_bh(), self.re_bh())
            .expect("bottom-hole Reynolds number is positive for valid parameters")
    }

    /// Constant bottom-hole friction pressure loss (Pa).
    pub fn f_bh(&self) -> f64 {
        let u = self.u_l_bh();
        self.lambda_bh() * self.rho_l * u * u * self.l_bh / (2.0 * self.d_bh())
    }

    /// Liquid mass that fills the section below the injection point.
    pub fn liquid_below_injection(&self) -> f64 {
        self.rho_l * self.s_bh * self.l_bh
    }
}

/// `1/sqrt(lambda) = -1.8 log10[((eps/D)/3.7)^1.11 + 6.9/Re]`.
pub(crate) fn colebrook_haaland(eps: f64, d: f64, re: f64) -> Option<f64> {
    let arg = ((eps / d) / 3.7).powf(1.11) + 6.9 / re;
    if !(arg > 0.0) {
        return None;
    }
    let inv_sqrt = -1.8 * arg.log10();
    if !(inv_sqrt > 0.0) {
        return None;
    }
    Some(1.0 / (inv_sqrt * inv_sqrt))
}

impl From<WellFile> for WellParameters {
    fn from(f: WellFile) -> Self {
        Self {
            name: f.name,
            r: f.R,
            g: f.g,
            mu: f.mu,
            rho_l: f.rho_L,
            m_g: f.M_G,
            t_an: f.T_an,
            v_an: f.V_an,
            l_an: f.L_an,
            p_gs: f.P_gs_bar * BAR,
            s_bh: f.S_bh,
            l_bh: f.L_bh,
            t_tb: f.T_tb,
            gor: f.GOR,
            p_res: f.P_res_bar * BAR,
            w_res_bar: f.w_res_bar,
            d_tb: f.D_tb,
            l_tb: f.L_tb,
            v_tb: f.V_tb,
            eps: f.eps,
            pi: f.PI,
            k_gs: f.K_gs,
            k_inj: f.K_inj,
            k_pr: f.K_pr,
            p_out: f.P_out_bar * BAR,
            friction_poly: f.friction_poly,
        }
    }
}

impl From<&WellParameters> for WellFile {
    fn from(p: &WellParameters) -> Self {
        Self {
            name: p.name.clone(),
            R: p.r,
            g: p.g,
            mu: p.mu,
            rho_L: p.rho_l,
            M_G: p.m_g,
            T_an: p.t_an,
            V_an: p.v_an,
            L_an: p.l_an,
            P_gs_bar: p.p_gs / BAR,
            S_bh: p.s_bh,
            L_bh: p.l_bh,
            T_tb: p.t_tb,
            GOR: p.gor,
            P_res_bar: p.p_res / BAR,
            w_res_bar: p.w_res_bar,
            D_tb: p.d_tb,
            L_tb: p.l_tb,
            V_tb: p.v_tb,
            eps: p.eps,
            PI: p.pi,
            K_gs: p.k_gs,
            K_inj: p.k_inj,
            K_pr: p.k_pr,
            P_out_bar: p.p_out / BAR,
            friction_poly: p.friction_poly,
        }
    }
}
