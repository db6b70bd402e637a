"""Canonical spherical shallow-water flows and convergence studies.

Initial states are produced by exact quadrature of closed-form fields:
geopotentials enter as cell integrals, velocities as edge-normal fluxes.
The steady zonal flow and the discretely balanced stream-function state
double as error references; the mountain and perturbed-jet flows are
free runs probed through conservation and smoothness diagnostics.

The convergence studies at the bottom exercise the operator chain in
isolation (scalar Laplacian, tangential flux reconstruction) over a mesh
refinement sequence, returning per-level norms that the caller can turn
into observed orders.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .advection import AdvectionContext
from .linsolve import SolverSuite, krylov_solve
from .mesh.generators import mesh_for
from .operators import assemble
from .quadrature import cell_integrals, edge_normal_flux
from .swe import ModelState, Planet, ShallowWaterModel

ZHAT = np.array([0.0, 0.0, 1.0])


# -- error norms --------------------------------------------------------

def l2_cell(mesh, phi, ref):
    """Area-weighted L2 norm of the cell-mean difference."""
    e = (phi - ref) / mesh.cell_area
    return float(np.sqrt(np.sum(mesh.cell_area * e**2) / mesh.cell_area.sum()))


def linf_cell(mesh, phi, ref):
    return float(np.abs((phi - ref) / mesh.cell_area).max())


def l2_edge(mesh, U, ref):
    """Kite-weighted L2 norm of the normal-velocity difference."""
    e = (U - ref) / mesh.edge_len
    return float(np.sqrt(np.sum(mesh.kite_area * e**2) / mesh.kite_area.sum()))


def linf_edge(mesh, U, ref):
    return float(np.abs((U - ref) / mesh.edge_len).max())


def observed_orders(errors):
    """log2 ratios of successive entries of a per-level error sequence."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


# -- case definitions ---------------------------------------------------

@dataclass
class CaseSetup:
    """Initial data plus whatever reference the case carries."""

    name: str
    planet: Planet
    state: ModelState
    dt: float
    surface_phi: np.ndarray = None     # cell means, zero when absent
    phi_ref: np.ndarray = None         # cell integrals of the exact solution
    U_ref: np.ndarray = None           # edge fluxes of the exact solution
    notes: dict = field(default_factory=dict)


def _zonal_fields(planet, wind, mean_geopotential):
    """Solid-body zonal flow and the geopotential balancing it."""
    a, omega = planet.radius, planet.omega

    def velocity(x):
        return (wind / a) * np.cross(ZHAT, x)

    def geopotential(x):
        z = x[..., 2]
        return mean_geopotential \
            - (a * omega * wind + 0.5 * wind**2) * (z / a)**2

    return velocity, geopotential


def steady_zonal(mesh, planet=None, wind=None, mean_geopotential=2.94e4,
                 dt=3600.0):
    """Solid-body rotation in gradient balance; an exact steady state.

    The default wind carries air around the equator in twelve days.
    """
    planet = planet or Planet()
    if wind is None:
        wind = 2.0 * np.pi * planet.radius / (12.0 * 86400.0)
    velocity, geopotential = _zonal_fields(planet, wind, mean_geopotential)
    phi = cell_integrals(mesh, geopotential)
    U = edge_normal_flux(mesh, velocity)
    state = ModelState(phi.copy(), U.copy(), 0.0)
    return CaseSetup(name="steady-zonal", planet=planet, state=state, dt=dt,
                     phi_ref=phi, U_ref=U,
                     notes={"wind": wind, "mean_geopotential": mean_geopotential})


def mountain(mesh, planet=None, depth=5960.0, wind=20.0,
             peak_height=2000.0, peak_lon=1.5 * np.pi, peak_lat=np.pi / 6,
             peak_radius=np.pi / 9, dt=900.0):
    """Zonal flow impinging on an isolated conical mountain."""
    planet = planet or Planet()
    a, g = planet.radius, planet.gravity

    def surface(x):
        xn = x / np.linalg.norm(x, axis=-1, keepdims=True)
        lat = np.arcsin(np.clip(xn[..., 2], -1.0, 1.0))
        lon = np.arctan2(xn[..., 1], xn[..., 0])
        dlon = np.abs((lon - peak_lon + np.pi) % (2.0 * np.pi) - np.pi)
        r = np.sqrt(np.minimum(peak_radius**2, dlon**2 + (lat - peak_lat)**2))
        return g * peak_height * (1.0 - r / peak_radius)

    velocity, geopotential = _zonal_fields(planet, wind, g * depth)
    # cell integrals, matching the prognostic geopotential convention
    surface_phi = cell_integrals(mesh, surface)
    phi = cell_integrals(mesh, geopotential) - surface_phi
    U = edge_normal_flux(mesh, velocity)
    state = ModelState(phi, U, 0.0)
    return CaseSetup(name="mountain", planet=planet, state=state, dt=dt,
                     surface_phi=surface_phi,
                     notes={"wind": wind, "depth": depth})


def perturbed_jet(mesh, planet=None, jet_speed=80.0, mean_depth=10000.0,
                  bump_height=120.0, dt=900.0):
    """Barotropically unstable midlatitude jet with a small height bump.

    The balanced depth comes from integrating the zonal momentum balance
    across latitude; the constant of integration is fixed by the global
    mean depth.  The bump seeds the roll-up.
    """
    planet = planet or Planet()
    a, omega, g = planet.radius, planet.omega, planet.gravity
    lat0, lat1 = np.pi / 7.0, np.pi / 2.0 - np.pi / 7.0
    norm = np.exp(-4.0 / (lat1 - lat0)**2)

    def uprof(lat):
        lat = np.asarray(lat, dtype=float)
        u = np.zeros_like(lat)
        inside = (lat > lat0) & (lat < lat1)
        li = lat[inside]
        u[inside] = (jet_speed / norm) * np.exp(1.0 / ((li - lat0) * (li - lat1)))
        return u

    # balanced depth on a fine latitude table, then interpolation
    lats = np.linspace(-0.5 * np.pi, 0.5 * np.pi, 20001)
    u = uprof(lats)
    integrand = a * u * (2.0 * omega * np.sin(lats) + np.tan(lats) * u / a)
    gh = -cumulative_trapezoid(integrand, lats, initial=0.0)
    mean = np.trapezoid(gh * np.cos(lats), lats) / np.trapezoid(np.cos(lats), lats)
    gh += g * mean_depth - mean

    def geopotential(x):
        xn = x / np.linalg.norm(x, axis=-1, keepdims=True)
        lat = np.arcsin(np.clip(xn[..., 2], -1.0, 1.0))
        lon = np.arctan2(xn[..., 1], xn[..., 0])
        base = np.interp(lat, lats, gh)
        bump = g * bump_height * np.cos(lat) \
            * np.exp(-(lon / (1.0 / 3.0))**2) \
            * np.exp(-((np.pi / 4.0 - lat) / (1.0 / 15.0))**2)
        return base + bump

    def velocity(x):
        xn = x / np.linalg.norm(x, axis=-1, keepdims=True)
        lat = np.arcsin(np.clip(xn[..., 2], -1.0, 1.0))
        east = np.cross(ZHAT, xn)
        east /= np.maximum(np.linalg.norm(east, axis=-1, keepdims=True), 1e-300)
        return uprof(lat)[..., None] * east

    phi = cell_integrals(mesh, geopotential)
    U = edge_normal_flux(mesh, velocity)
    return CaseSetup(name="perturbed-jet", planet=planet,
                     state=ModelState(phi, U, 0.0), dt=dt,
                     notes={"jet_speed": jet_speed, "bump_height": bump_height})


def balanced_stream_state(mesh, ops, coriolis, psi_verts):
    """Discretely exact geostrophic state from a vertex stream function.

    The flux is the circulation-free image of the stream function and the
    geopotential is chosen so the constant-rotation linear balance holds
    to machine precision, making the pair a fixed point of the linear
    step.
    """
    U = -(ops.d1 @ psi_verts)
    phi = coriolis * mesh.cell_area * (ops.vc_mass.T @ psi_verts)
    return ModelState(phi, U, 0.0)


def build_case(name, mesh, planet=None, **kw):
    builders = {"steady-zonal": steady_zonal, "mountain": mountain,
                "perturbed-jet": perturbed_jet}
    if name not in builders:
        raise ValueError(f"unknown case '{name}'; pick from {sorted(builders)}")
    return builders[name](mesh, planet=planet, **kw)


# -- model assembly helper ---------------------------------------------

def make_model(mesh, case, ops=None, tight=False, helmholtz_tol=1e-8,
               newton_iters=4, jacobi_outer=10, jacobi_inner=2, limit=False,
               alpha=0.5, inverse_terms=None, order=2):
    """Operators + solvers + transport for a mesh, wired to a case."""
    if ops is None:
        ops = assemble(mesh)
    suite = SolverSuite.build(ops, tight=tight, helmholtz_tol=helmholtz_tol,
                              inverse_terms=inverse_terms)
    context = AdvectionContext(mesh, order=order)
    model = ShallowWaterModel(ops, suite, context, planet=case.planet,
                              surface_phi=case.surface_phi, alpha=alpha,
                              newton_iters=newton_iters,
                              jacobi_outer=jacobi_outer,
                              jacobi_inner=jacobi_inner, limit=limit)
    return model


# -- operator convergence studies --------------------------------------

def _mesh_sequence(family, levels, radius=1.0):
    return [mesh_for(family, lv, radius=radius) for lv in levels]


def _harmonic(x):
    """First sectoral harmonic, eigenfunction of the sphere Laplacian."""
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return (x / r)[..., 1]


def laplacian_convergence(family="hex", levels=(1, 2, 3, 4)):
    """Cell-mean errors of the discrete Laplacian of a smooth harmonic.

    The weak gradient is inverted to machine tolerance so the numbers
    measure the spatial operators, not the iterative solvers.  Returns a
    list of (ncells, max, L2) error rows, one per level.
    """
    out = []
    for mesh in _mesh_sequence(family, levels):
        ops = assemble(mesh)
        phi = cell_integrals(mesh, _harmonic)
        grad = krylov_solve(ops.mass1, ops.weak_gradient_rhs(phi),
                            rtol=1e-12, spd=True)
        lap = (ops.d2 @ grad) / mesh.cell_area
        exact = -2.0 * cell_integrals(mesh, _harmonic) / mesh.cell_area
        err = lap - exact
        linf = float(np.abs(err).max())
        l2 = float(np.sqrt(np.sum(mesh.cell_area * err**2)
                           / mesh.cell_area.sum()))
        out.append((mesh.ncells, linf, l2))
    return out


def coriolis_convergence(family="hex", levels=(1, 2, 3, 4)):
    """Mismatch of the primal and dual rotations of a stream function.

    The same stream function enters once through vertex values and the
    rotational pairing, once through dual-vertex values and the flux
    pairing; the residual, mapped back to a velocity, converges with the
    mesh.  Returns (ncells, max, L2) rows of the scaled velocity error.
    """
    out = []
    for mesh in _mesh_sequence(family, levels):
        ops = assemble(mesh)
        psi_v = _harmonic(mesh.verts)
        psi_c = _harmonic(mesh.dual_verts)
        resid = ops.rot_mass @ (ops.d1 @ psi_v) \
            + ops.ee_mass @ (ops.d1b @ psi_c)
        delta = krylov_solve(ops.ee_mass, resid, rtol=1e-12)
        e = delta / mesh.dual_edge_len
        linf = float(np.abs(e).max())
        l2 = float(np.sqrt(np.sum(mesh.kite_area * e**2)
                           / mesh.kite_area.sum()))
        out.append((mesh.ncells, linf, l2))
    return out


# -- run output ---------------------------------------------------------

class DiagnosticsWriter:
    """CSV time series of the conserved and dissipated quantities.

    Columns: total mass, total energy with its kinetic/potential split,
    potential enstrophy, and the dual-mass and PV tracer mismatches.
    Diagnostics use tight solves so the columns measure the scheme, not
    the run-mode solver slack.
    """

    COLUMNS = ("step", "time", "mass", "energy", "kinetic", "potential",
               "enstrophy", "dual_mass_err", "pv_err")

    def __init__(self, path, model, state):
        from .swe import BudgetTracker
        self.path = path
        self.model = model
        was_tight = model.suite.tight
        model.suite.tight = True
        try:
            self.tracker = BudgetTracker(model, state)
        finally:
            model.suite.tight = was_tight
        self._fh = open(path, "w")
        self._fh.write(",".join(self.COLUMNS) + "\n")
        self.record(0, state)

    def advance(self, diag):
        self.tracker.advance(diag)

    def record(self, step, state):
        m = self.model
        was_tight = m.suite.tight
        m.suite.tight = True
        try:
            dm, pm = self.tracker.errors(state)
            mean = m.ops.mass2_inv @ state.phi
            kin = float(np.sum(mean * m.kinetic_cell(state.U)))
            pot = float(np.sum(mean * (0.5 * state.phi + m.surface_phi)))
            row = (step, state.time, m.total_mass(state), kin + pot, kin, pot,
                   m.potential_enstrophy(state), dm, pm)
        finally:
            m.suite.tight = was_tight
        self._fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def write_field_vtk(path, mesh, cell_data=None, vert_data=None):
    """Legacy-ASCII VTK polygon file with optional cell/point scalars."""
    sizes = np.diff(mesh.cell_off)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write("polygonal spherical mesh\nASCII\nDATASET POLYDATA\n")
        f.write(f"POINTS {mesh.nverts} double\n")
        for p in mesh.verts:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        f.write(f"POLYGONS {mesh.ncells} {mesh.ncells + sizes.sum()}\n")
        for i in range(mesh.ncells):
            ring = mesh.cell_verts[mesh.cell_off[i]:mesh.cell_off[i + 1]]
            f.write(" ".join([str(len(ring))] + [str(v) for v in ring]) + "\n")
        if cell_data:
            f.write(f"CELL_DATA {mesh.ncells}\n")
            for name, values in cell_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                f.write("\n".join(f"{v:.17g}" for v in values) + "\n")
        if vert_data:
            f.write(f"POINT_DATA {mesh.nverts}\n")
            for name, values in vert_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                f.write("\n".join(f"{v:.17g}" for v in values) + "\n")
