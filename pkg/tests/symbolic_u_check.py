"""Symbolic check of the transverse scalar equation used by ``solve_u``.

Builds the adapted metric to first order off I0 (y0 = 0), applies the wave
operator to ``Phi = phi + y0 u + y0^2 w`` on I0 and subtracts
``(2/theta) d1 u + A u + B`` with the coefficients of the solver. Prints
whether psi01 enters, then the simplified difference (expected: 0).
"""

import sympy as sp
y = sp.symbols('y0 y1 y2 y3'); y0,y1,y2,y3 = y
X = (y1,y2,y3)
th = sp.Function('th')(*X); p11=sp.Function('p11')(*X); p01=sp.Function('p01')(*X)
p1 = [sp.Function(f'p1{a}')(*X) for a in (2,3)]
T = [[sp.Function(f'T{min(a,b)}{max(a,b)}')(*X) for b in (2,3)] for a in (2,3)]
P = [[sp.Function(f'P{min(a,b)}{max(a,b)}')(*X) for b in (2,3)] for a in (2,3)]
ph=sp.Function('ph')(*X); u=sp.Function('u')(*X); w=sp.Function('w')(*X)
g = sp.zeros(4,4)
g[0,0]=g[1,1]=y0*p11
g[0,1]=g[1,0]=th+y0*p01
for i,a in enumerate((2,3)):
    g[1,a]=g[a,1]=y0*p1[i]; g[0,a]=g[a,0]=-y0*p1[i]
    for j,b in enumerate((2,3)):
        g[a,b]=T[i][j]+y0*P[i][j]
Phi = ph + y0*u + y0**2*w
g0 = g.subs(y0,0); gi = g0.inv()
dg = [[[sp.diff(g[m,n],y[l]).subs(y0,0) for n in range(4)] for m in range(4)] for l in range(4)]
def G1(k,m,n): return sp.Rational(1,2)*(dg[m][k][n]+dg[n][k][m]-dg[k][m][n])
box = 0
for m in range(4):
    for n in range(4):
        if gi[m,n]==0: continue
        term = sp.diff(Phi,y[m],y[n]).subs(y0,0)
        for l in range(4):
            Gl = sum(gi[l,k]*G1(k,m,n) for k in range(4))
            term -= Gl*sp.diff(Phi,y[l]).subs(y0,0)
        box += gi[m,n]*term
box = sp.simplify(sp.expand(box))
print('psi01 present:', box.has(p01))
# my formula
Ti = sp.Matrix(2,2,lambda i,j:T[i][j]).inv()
tr = sum(Ti[i,j]*sp.diff(T[i][j],y1) for i in range(2) for j in range(2))
chi = sum(Ti[i,j]*P[i][j] for i in range(2) for j in range(2))
A = -(1/th)*(p11/th - tr/2)
dT = lambda c,a,b: sp.diff(T[a][b], X[1+c])
Gam = lambda c,a,b: sp.Rational(1,2)*sum(Ti[c,d]*(dT(a,b,d)+dT(b,a,d)-dT(d,a,b)) for d in range(2))
Gc = [sum(Ti[c,d]*(p1[d]-sp.diff(th,X[1+d]))/th for d in range(2)) + sum(Ti[a,b]*Gam(c,a,b) for a in range(2) for b in range(2)) for c in range(2)]
B = sum(Ti[a,b]*sp.diff(ph,X[1+a],X[1+b]) for a in range(2) for b in range(2)) + chi*sp.diff(ph,y1)/(2*th) - sum(Gc[c]*sp.diff(ph,X[1+c]) for c in range(2))
mine = (2/th)*sp.diff(u,y1) + A*u + B
print(sp.simplify(sp.expand(box - mine)))
